//! Flow-matching training: rectified (linear) probability path, MSE on the
//! velocity target, reverse-mode gradients through the MLP, and Adam.
//!
//! For a sample (u₁, cond): draw u₀ ~ N(0, I) and t ~ U[0,1), form
//! u_t = (1−t)·u₀ + t·u₁, and regress v_θ(u_t, t | cond) onto u₁ − u₀.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CarParams, CarState};
use crate::error::{Error, Result};
use crate::expert::{allowed_window_starts, Dataset};
use crate::grid::{extract_local_patch, OccupancyGrid, RobotGeometry};

use super::condition::{build_condition, Target};
use super::mlp::{Gradients, PolicyNet};

/// One supervised example: a normalized expert chunk and its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// Interleaved normalized actions, length 2·H.
    pub u1: Vec<f64>,
    pub cond: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Actions per inference chunk.
    pub h: usize,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    pub rng_seed: u64,
    /// Observation patch geometry (must match plan-time settings).
    pub patch_size: usize,
    pub patch_extent: f64,
    /// Training-window stride along each trajectory.
    pub stride: usize,
    /// Minimum obstacle clearance for a window start to be kept.
    pub clearance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            h: 16,
            hidden: vec![256, 256, 256],
            init_scale: 1.0,
            rng_seed: 0,
            patch_size: 15,
            patch_extent: 6.0,
            stride: 4,
            clearance: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.h == 0 {
            return Err(Error::Config("H must be at least 1".into()));
        }
        if self.patch_size % 2 == 0 || self.patch_size == 0 {
            return Err(Error::Config("patch size must be odd".into()));
        }
        if !(self.patch_extent > 0.0) {
            return Err(Error::Config("patch extent must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.clearance < 0.0 {
            return Err(Error::Config("clearance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn widths(&self, cond_dim: usize) -> Vec<usize> {
        let mut w = vec![PolicyNet::input_dim(self.h, cond_dim)];
        w.extend_from_slice(&self.hidden);
        w.push(2 * self.h);
        w
    }
}

/// Flow-matching loss and gradients with the path randomness supplied by
/// the caller: `draws[i]` is (u₀, t) for `batch[i]`. Deterministic; this is
/// the function the finite-difference oracle differentiates.
pub fn fm_loss_at(
    net: &PolicyNet,
    batch: &[TrainSample],
    draws: &[(Vec<f64>, f64)],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    assert_eq!(batch.len(), draws.len());
    let dim = net.output_dim();
    let denom = (batch.len() * dim) as f64;
    let mut grads = net.zero_gradients();
    let mut loss = 0.0;
    for (s, (u0, t)) in batch.iter().zip(draws.iter()) {
        assert_eq!(s.u1.len(), dim);
        assert_eq!(u0.len(), dim);
        let ut: Vec<f64> = u0.iter().zip(s.u1.iter()).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let acts = net.forward_trace(&ut, *t, &s.cond)?;
        let pred = acts.last().unwrap();
        let mut d_out = vec![0.0; dim];
        for i in 0..dim {
            let r = pred[i] - (s.u1[i] - u0[i]);
            loss += r * r;
            d_out[i] = 2.0 * r / denom;
        }
        net.backward(&acts, &d_out, &mut grads);
    }
    Ok((loss / denom, grads))
}

/// Draw the path randomness for a batch in a pinned order (all u₀ normals,
/// then t) per sample.
pub fn draw_path_noise(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, f64)> {
    (0..count)
        .map(|_| {
            let u0: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let t: f64 = rng.gen_range(0.0..1.0);
            (u0, t)
        })
        .collect()
}

/// One-call loss with internal randomness.
pub fn fm_loss(net: &PolicyNet, batch: &[TrainSample], rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let draws = draw_path_noise(net.output_dim(), batch.len(), rng);
    fm_loss_at(net, batch, &draws)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, net: &mut PolicyNet, grads: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let flat = grads.flatten();
        let (m, v) = (&mut self.m, &mut self.v);
        net.apply_update(|i, w| {
            let g = flat[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            w - cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps)
        });
    }
}

/// Extract supervised windows from an expert dataset: for every allowed
/// window start, the H following actions (normalized) plus the conditioning
/// built at the window's first state with the scenario goal as target.
pub fn build_training_samples(
    ds: &Dataset,
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    params: &CarParams,
    cfg: &TrainConfig,
) -> Result<Vec<TrainSample>> {
    cfg.validate()?;
    ds.norm.validate()?;
    let mut samples = Vec::new();
    for traj in &ds.trajectories {
        let starts = allowed_window_starts(traj, grid, geom, cfg.clearance, cfg.h, cfg.stride);
        for j in starts {
            let s: &CarState = &traj.states[j];
            let patch = extract_local_patch(grid, s.pose(), cfg.patch_size, cfg.patch_extent);
            let cond = build_condition(s, &Target::Goal(traj.goal.0, traj.goal.1), &patch, params);
            let mut u1 = Vec::with_capacity(2 * cfg.h);
            for a in &traj.actions[j..j + cfg.h] {
                let n = ds.norm.normalize(a);
                u1.push(n[0]);
                u1.push(n[1]);
            }
            samples.push(TrainSample { u1, cond });
        }
    }
    if samples.is_empty() {
        return Err(Error::Training("no training windows survive filtering".into()));
    }
    Ok(samples)
}

/// Adam-optimize a fresh network on the samples; returns the net and the
/// per-step loss curve. Deterministic for a fixed config.
pub fn train(samples: &[TrainSample], condition_dim: usize, cfg: &TrainConfig) -> Result<(PolicyNet, Vec<f64>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Training("no training samples".into()));
    }
    for s in samples {
        if s.u1.len() != 2 * cfg.h {
            return Err(Error::DimMismatch(format!("chunk len {} != {}", s.u1.len(), 2 * cfg.h)));
        }
        if s.cond.len() != condition_dim {
            return Err(Error::DimMismatch(format!("condition len {} != {condition_dim}", s.cond.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let widths = cfg.widths(condition_dim);
    let mut net = PolicyNet::random(&widths, cfg.h, condition_dim, cfg.init_scale, &mut rng)?;
    let mut adam = Adam::new(net.parameter_count());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::new();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, grads) = fm_loss(&net, &batch, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became non-finite at step {} (lr {})",
                    curve.len(),
                    cfg.learning_rate
                )));
            }
            curve.push(loss);
            adam.update(&mut net, &grads, cfg);
        }
    }
    // Sanity gate: training must at least beat the zero-velocity baseline
    // E‖u₁ − u₀‖²/dim = 1 + mean(u₁²).
    let dim = 2 * cfg.h;
    let mean_sq =
        samples.iter().map(|s| s.u1.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / (samples.len() * dim) as f64;
    let baseline = 1.0 + mean_sq;
    let tail = curve.len().max(10) / 10;
    let final_avg = curve[curve.len() - tail.min(curve.len())..].iter().sum::<f64>() / tail.min(curve.len()) as f64;
    if !(final_avg < baseline) {
        return Err(Error::Training(format!(
            "final loss {final_avg:.4} did not beat the noise baseline {baseline:.4}"
        )));
    }
    Ok((net, curve))
}
