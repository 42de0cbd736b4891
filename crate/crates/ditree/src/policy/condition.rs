//! Conditioning vector assembly: everything the policy sees, expressed in
//! the frame of the tree node so that the learned field is translation- and
//! rotation-equivariant by construction.
//!
//! Layout: [patch (P² floats, row-major) | Δx | Δy | sin Δψ | cos Δψ |
//! v_norm | D_norm | δ_norm], where (Δx, Δy) is the target offset rotated
//! by −ψ_near and divided by the patch extent (clipped to [−2, 2]).

use crate::dynamics::{wrap_angle, CarParams, CarState};
use crate::grid::LocalPatch;

/// Conditioning target: either a sampled planner state or the goal point.
/// A goal has no heading of its own; its relative heading is defined as the
/// bearing from the node to the goal, which rotates with the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    State(CarState),
    Goal(f64, f64),
}

/// Conditioning vector width for a P×P patch.
pub fn condition_dim(patch_size: usize) -> usize {
    patch_size * patch_size + 7
}

fn norm_interval(v: f64, lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    ((v - mid) / half).clamp(-1.0, 1.0)
}

pub fn build_condition(
    x_near: &CarState,
    target: &Target,
    patch: &LocalPatch,
    params: &CarParams,
) -> Vec<f64> {
    debug_assert_eq!(patch.frame.x, x_near.x);
    debug_assert_eq!(patch.frame.y, x_near.y);
    let (tx, ty) = match target {
        Target::State(s) => (s.x, s.y),
        Target::Goal(x, y) => (*x, *y),
    };
    let dx = tx - x_near.x;
    let dy = ty - x_near.y;
    let (sin, cos) = x_near.psi.sin_cos();
    // World offset rotated by −ψ into the node frame.
    let rel_x = cos * dx + sin * dy;
    let rel_y = -sin * dx + cos * dy;
    let rel_heading = match target {
        Target::State(s) => wrap_angle(s.psi - x_near.psi),
        Target::Goal(..) => {
            if dx == 0.0 && dy == 0.0 {
                0.0
            } else {
                wrap_angle(f64::atan2(dy, dx) - x_near.psi)
            }
        }
    };
    let mut v = Vec::with_capacity(condition_dim(patch.size));
    v.extend_from_slice(&patch.values);
    v.push((rel_x / patch.extent).clamp(-2.0, 2.0));
    v.push((rel_y / patch.extent).clamp(-2.0, 2.0));
    v.push(rel_heading.sin());
    v.push(rel_heading.cos());
    v.push(norm_interval(x_near.v, params.v_min, params.v_max));
    v.push(norm_interval(x_near.d, params.d_min, params.d_max));
    v.push(norm_interval(x_near.delta, params.delta_min, params.delta_max));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{extract_local_patch, load_map, OccupancyGrid};
    use approx::assert_relative_eq;

    fn free_grid(n: usize) -> OccupancyGrid {
        let row: String = std::iter::repeat('.').take(n).collect();
        let body: Vec<String> = std::iter::repeat(row).take(n).collect();
        load_map(&format!("cell_size 1.0\n{}\n", body.join("\n"))).unwrap()
    }

    #[test]
    fn self_target_gives_zero_offset_and_identity_heading() {
        let p = CarParams::default();
        let g = free_grid(21);
        let s = CarState::new(10.2, 9.7, 0.8, 1.0, 0.3, -0.1);
        let patch = extract_local_patch(&g, s.pose(), 15, 6.0);
        let c = build_condition(&s, &Target::State(s), &patch, &p);
        assert_eq!(c.len(), condition_dim(15));
        let tail = &c[225..];
        assert_eq!(tail[0], 0.0);
        assert_eq!(tail[1], 0.0);
        assert_eq!(tail[2], 0.0); // sin 0
        assert_eq!(tail[3], 1.0); // cos 0
    }

    #[test]
    fn ego_features_normalize_to_unit_interval() {
        let p = CarParams::default();
        let g = free_grid(21);
        let s = CarState::new(10.0, 10.0, 0.0, p.v_max, p.d_min, 0.0);
        let patch = extract_local_patch(&g, s.pose(), 15, 6.0);
        let c = build_condition(&s, &Target::Goal(15.0, 10.0), &patch, &p);
        let tail = &c[225..];
        assert_eq!(tail[4], 1.0); // v at its max
        assert_eq!(tail[5], -1.0); // D at its min
        assert_relative_eq!(tail[6], 0.0, epsilon = 1e-12); // centered δ
        assert!(c.iter().all(|x| x.is_finite()));
        assert!(c[..225].iter().all(|x| *x == 0.0 || *x == 1.0));
    }

    #[test]
    fn translation_invariance_is_exact_on_integer_shifts() {
        // Integer-cell shifts keep the patch identical (grid content moves
        // with the pose), and the relative coordinates are differences.
        let p = CarParams::default();
        let mut g = free_grid(24);
        for &(x, y) in &[(5usize, 6usize), (6, 6), (9, 9), (12, 4)] {
            g.set_occupied(x, y, true);
        }
        let mut shifted = free_grid(24);
        for &(x, y) in &[(5usize, 6usize), (6, 6), (9, 9), (12, 4)] {
            shifted.set_occupied(x + 5, y + 3, true);
        }
        let a = CarState::new(7.3, 6.9, 0.7, 1.2, 0.1, 0.05);
        let b = CarState::new(12.3, 9.9, 0.7, 1.2, 0.1, 0.05);
        let ta = Target::State(CarState::new(9.0, 4.0, -0.4, 0.5, 0.0, 0.0));
        let tb = Target::State(CarState::new(14.0, 7.0, -0.4, 0.5, 0.0, 0.0));
        let ca = build_condition(&a, &ta, &extract_local_patch(&g, a.pose(), 15, 6.0), &p);
        let cb = build_condition(&b, &tb, &extract_local_patch(&shifted, b.pose(), 15, 6.0), &p);
        assert_eq!(ca.len(), cb.len());
        for (x, y) in ca.iter().zip(cb.iter()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn world_rotation_by_quarter_turn_leaves_vector_unchanged() {
        // Rotate map content, node, and target by 90° about the node
        // position (a cell-aligned pose, so patch equality is exact).
        let p = CarParams::default();
        let n = 15;
        let center = (7usize, 7usize); // node cell; pose at its center
        let obstacles = [(3usize, 4usize), (4, 4), (9, 10), (10, 3), (6, 8), (12, 12)];
        let mut g = free_grid(n);
        for &(x, y) in &obstacles {
            g.set_occupied(x, y, true);
        }
        // 90° CCW about the center cell: (x, y) → (cx − (y − cy), cy + (x − cx)).
        let mut rot = free_grid(n);
        for &(x, y) in &obstacles {
            let rx = center.0 as isize - (y as isize - center.1 as isize);
            let ry = center.1 as isize + (x as isize - center.0 as isize);
            rot.set_occupied(rx as usize, ry as usize, true);
        }
        let cx = center.0 as f64 + 0.5;
        let cy = center.1 as f64 + 0.5;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let near = CarState::new(cx, cy, 0.4, 1.0, 0.2, -0.1);
        let near_rot = CarState::new(cx, cy, 0.4 + half_pi, 1.0, 0.2, -0.1);
        // Target 2 m away at bearing 0.9 rad; rotate it with the world.
        let t_world = CarState::new(cx + 2.0 * 0.9f64.cos(), cy + 2.0 * 0.9f64.sin(), 1.3, 0.5, 0.0, 0.0);
        let t_rot = CarState::new(
            cx + (t_world.x - cx) * half_pi.cos() - (t_world.y - cy) * half_pi.sin(),
            cy + (t_world.x - cx) * half_pi.sin() + (t_world.y - cy) * half_pi.cos(),
            t_world.psi + half_pi,
            0.5,
            0.0,
            0.0,
        );
        let pa = extract_local_patch(&g, near.pose(), 15, 15.0);
        let pb = extract_local_patch(&rot, near_rot.pose(), 15, 15.0);
        let ca = build_condition(&near, &Target::State(t_world), &pa, &p);
        let cb = build_condition(&near_rot, &Target::State(t_rot), &pb, &p);
        for (i, (x, y)) in ca.iter().zip(cb.iter()).enumerate() {
            assert_relative_eq!(*x, *y, epsilon = 1e-9, max_relative = 1e-9);
            let _ = i;
        }

        // Same property with a goal target (bearing-defined heading).
        let ga = Target::Goal(t_world.x, t_world.y);
        let gb = Target::Goal(t_rot.x, t_rot.y);
        let ca = build_condition(&near, &ga, &pa, &p);
        let cb = build_condition(&near_rot, &gb, &pb, &p);
        for (x, y) in ca.iter().zip(cb.iter()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn far_targets_are_clipped() {
        let p = CarParams::default();
        let g = free_grid(41);
        let s = CarState::new(20.0, 20.0, 0.0, 0.0, 0.0, 0.0);
        let patch = extract_local_patch(&g, s.pose(), 15, 6.0);
        let c = build_condition(&s, &Target::Goal(40.0, 20.0), &patch, &p);
        let tail = &c[225..];
        assert_eq!(tail[0], 2.0); // 20 m ahead / 6 m extent, clipped
        assert_eq!(tail[1], 0.0);
    }
}
