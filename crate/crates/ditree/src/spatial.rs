//! Exact nearest-neighbor search for tree vertices under the weighted
//! planning metric
//!
//!   d(a, b)² = w_xy·(Δx² + Δy²) + w_ψ·wrap(Δψ)² + w_v·Δv²
//!
//! Vertices are indexed by a 2-d k-d tree over (x, y) only; a subtree is
//! pruned when w_xy·(axis distance)² already exceeds the best distance,
//! which is a valid lower bound because the remaining metric terms are
//! non-negative. The tree is rebuilt to median balance every time the
//! vertex count doubles, so intermixed insert/query loads stay O(log n)
//! amortized. Results are exact and tie-break toward the smallest id.

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, CarState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricWeights {
    pub w_xy: f64,
    pub w_psi: f64,
    pub w_v: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self { w_xy: 1.0, w_psi: 0.5, w_v: 0.1 }
    }
}

impl MetricWeights {
    /// Position-only variant (paper-style (x, y) metric).
    pub fn position_only() -> Self {
        Self { w_xy: 1.0, w_psi: 0.0, w_v: 0.0 }
    }

    pub fn dist2(&self, a: &CarState, b: &CarState) -> f64 {
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        let dpsi = wrap_angle(a.psi - b.psi);
        let dv = a.v - b.v;
        self.w_xy * (dx * dx + dy * dy) + self.w_psi * dpsi * dpsi + self.w_v * dv * dv
    }
}

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Link {
    left: u32,
    right: u32,
}

/// Incremental k-d index over planner states. Ids are assigned in
/// insertion order, starting at 0, and remain stable across rebuilds.
#[derive(Debug, Clone)]
pub struct StateIndex {
    states: Vec<CarState>,
    links: Vec<Link>,
    root: u32,
    next_rebuild: usize,
}

impl Default for StateIndex {
    fn default() -> Self {
        Self::new()
    }
}

impl StateIndex {
    pub fn new() -> Self {
        Self { states: Vec::new(), links: Vec::new(), root: NIL, next_rebuild: 64 }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, id: u32) -> &CarState {
        &self.states[id as usize]
    }

    fn coord(&self, id: u32, axis: usize) -> f64 {
        let s = &self.states[id as usize];
        if axis == 0 {
            s.x
        } else {
            s.y
        }
    }

    pub fn insert(&mut self, s: &CarState) -> u32 {
        let id = self.states.len() as u32;
        self.states.push(*s);
        self.links.push(Link { left: NIL, right: NIL });
        if self.root == NIL {
            self.root = id;
        } else {
            let mut cur = self.root;
            let mut axis = 0usize;
            loop {
                let go_left = self.coord(id, axis) < self.coord(cur, axis);
                let next = if go_left { self.links[cur as usize].left } else { self.links[cur as usize].right };
                if next == NIL {
                    if go_left {
                        self.links[cur as usize].left = id;
                    } else {
                        self.links[cur as usize].right = id;
                    }
                    break;
                }
                cur = next;
                axis ^= 1;
            }
        }
        if self.states.len() >= self.next_rebuild {
            self.rebuild();
            self.next_rebuild = self.states.len() * 2;
        }
        id
    }

    fn rebuild(&mut self) {
        let mut ids: Vec<u32> = (0..self.states.len() as u32).collect();
        for l in &mut self.links {
            *l = Link { left: NIL, right: NIL };
        }
        let n = ids.len();
        self.root = self.build(&mut ids[..n], 0);
    }

    fn build(&mut self, ids: &mut [u32], axis: usize) -> u32 {
        if ids.is_empty() {
            return NIL;
        }
        let mid = ids.len() / 2;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, axis).partial_cmp(&self.coord(b, axis)).unwrap().then(a.cmp(&b))
        });
        let node = ids[mid];
        let (lo, hi) = ids.split_at_mut(mid);
        let left = self.build(lo, axis ^ 1);
        let right = self.build(&mut hi[1..], axis ^ 1);
        self.links[node as usize] = Link { left, right };
        node
    }

    /// Exact nearest vertex under the weighted metric; ties go to the
    /// smallest id. Returns `None` only on an empty index.
    pub fn nearest(&self, q: &CarState, w: &MetricWeights) -> Option<u32> {
        if self.root == NIL {
            return None;
        }
        let mut best = f64::INFINITY;
        let mut best_id = NIL;
        self.search(self.root, 0, q, w, &mut best, &mut best_id);
        Some(best_id)
    }

    fn search(&self, node: u32, axis: usize, q: &CarState, w: &MetricWeights, best: &mut f64, best_id: &mut u32) {
        let d2 = w.dist2(self.state(node), q);
        if d2 < *best || (d2 == *best && node < *best_id) {
            *best = d2;
            *best_id = node;
        }
        let qc = if axis == 0 { q.x } else { q.y };
        let diff = qc - self.coord(node, axis);
        let l = self.links[node as usize];
        let (near, far) = if diff < 0.0 { (l.left, l.right) } else { (l.right, l.left) };
        if near != NIL {
            self.search(near, axis ^ 1, q, w, best, best_id);
        }
        // The far half-space is at least |diff| away in the split axis.
        if far != NIL && w.w_xy * diff * diff <= *best {
            self.search(far, axis ^ 1, q, w, best, best_id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_scan(states: &[CarState], q: &CarState, w: &MetricWeights) -> u32 {
        let mut best = f64::INFINITY;
        let mut best_id = 0u32;
        for (i, s) in states.iter().enumerate() {
            let d = w.dist2(s, q);
            if d < best {
                best = d;
                best_id = i as u32;
            }
        }
        best_id
    }

    fn random_state(rng: &mut ChaCha8Rng) -> CarState {
        CarState::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-3.2..3.2),
            rng.gen_range(-1.0..3.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.4..0.4),
        )
    }

    #[test]
    fn single_vertex_tree() {
        let mut idx = StateIndex::new();
        let id = idx.insert(&CarState::zeros());
        assert_eq!(id, 0);
        let q = CarState::new(3.0, -2.0, 1.0, 0.5, 0.0, 0.0);
        assert_eq!(idx.nearest(&q, &MetricWeights::default()), Some(0));
    }

    #[test]
    fn equidistant_vertices_pick_smaller_id() {
        let mut idx = StateIndex::new();
        idx.insert(&CarState::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        idx.insert(&CarState::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let q = CarState::zeros();
        assert_eq!(idx.nearest(&q, &MetricWeights::default()), Some(0));

        // Same geometry inserted in the opposite order: still the smaller id.
        let mut idx2 = StateIndex::new();
        idx2.insert(&CarState::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        idx2.insert(&CarState::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(idx2.nearest(&q, &MetricWeights::default()), Some(0));
    }

    #[test]
    fn matches_linear_scan_on_random_clouds() {
        let weights = [
            MetricWeights::default(),
            MetricWeights::position_only(),
            MetricWeights { w_xy: 2.0, w_psi: 1.5, w_v: 0.7 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for w in &weights {
            let mut idx = StateIndex::new();
            let mut states = Vec::new();
            for _ in 0..1000 {
                let s = random_state(&mut rng);
                idx.insert(&s);
                states.push(s);
            }
            for _ in 0..100 {
                let q = random_state(&mut rng);
                assert_eq!(idx.nearest(&q, w), Some(linear_scan(&states, &q, w)), "weights {w:?}");
            }
        }
    }

    #[test]
    fn interleaved_inserts_and_queries_stay_exact() {
        let w = MetricWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut idx = StateIndex::new();
        let mut states = Vec::new();
        for step in 0..400 {
            let s = random_state(&mut rng);
            idx.insert(&s);
            states.push(s);
            if step % 3 == 0 {
                let q = random_state(&mut rng);
                assert_eq!(idx.nearest(&q, &w), Some(linear_scan(&states, &q, &w)));
            }
        }
    }

    #[test]
    fn heading_wraps_in_the_metric() {
        let w = MetricWeights { w_xy: 1.0, w_psi: 1.0, w_v: 0.0 };
        let a = CarState::new(0.0, 0.0, 3.1, 0.0, 0.0, 0.0);
        let b = CarState::new(0.0, 0.0, -3.1, 0.0, 0.0, 0.0);
        // Angular gap is 2π − 6.2 ≈ 0.083, not 6.2.
        let d = w.dist2(&a, &b);
        assert!(d < 0.01, "wrapped distance should be small, got {d}");

        // A vertex just across the ±π seam must beat one 0.5 rad away.
        let mut idx = StateIndex::new();
        idx.insert(&CarState::new(0.0, 0.0, 2.6, 0.0, 0.0, 0.0));
        idx.insert(&CarState::new(0.0, 0.0, -3.1, 0.0, 0.0, 0.0));
        let q = CarState::new(0.0, 0.0, 3.1, 0.0, 0.0, 0.0);
        assert_eq!(idx.nearest(&q, &w), Some(1));
    }

    #[test]
    fn duplicate_positions_tie_break_by_id() {
        let w = MetricWeights::position_only();
        let mut idx = StateIndex::new();
        let s = CarState::new(2.0, 2.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..10 {
            idx.insert(&s);
        }
        // All ten are exactly equidistant from any query.
        let q = CarState::new(5.0, -1.0, 0.5, 1.0, 0.0, 0.0);
        assert_eq!(idx.nearest(&q, &w), Some(0));
    }
}
