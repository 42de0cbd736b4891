//! Chunk sampling: integrate the learned velocity field from Gaussian
//! noise to an action chunk, then denormalize into the control box.
//!
//! ODE mode runs plain Euler steps u ← u + v_θ(u, t)·Δt with Δt = 1/K.
//! SDE mode adds the Euler–Maruyama term g(t)·√Δt·ε with g(t) = g₀·(1−t),
//! and an optional ε_f-scaled Gaussian kick on the final chunk gives the
//! sampler full support even in ODE mode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CarAction, CarParams};
use crate::error::{Error, Result};

use super::mlp::PolicyNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Ode,
    Sde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Denoising / integration steps.
    pub k: usize,
    pub mode: SampleMode,
    /// g₀ in g(t) = g₀·(1−t); only used in SDE mode.
    pub sde_noise_scale: f64,
    /// Diffusion goal bias: probability of conditioning on the goal
    /// (the remainder of edges chase the planner's random state).
    pub dgb: f64,
    /// Std of the Gaussian added to the final normalized chunk.
    pub final_noise: f64,
    pub rng_seed: u64,
    /// Action normalization fitted at training time. Absent means the plant
    /// control box, which only suits policies trained that way.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<ActionNorm>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            k: 1,
            mode: SampleMode::Ode,
            sde_noise_scale: 0.5,
            dgb: 0.85,
            final_noise: 0.05,
            rng_seed: 0,
            norm: None,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("sampler needs K >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dgb) {
            return Err(Error::Config("dgb must lie in [0,1]".into()));
        }
        if self.final_noise < 0.0 {
            return Err(Error::Config("final_noise must be non-negative".into()));
        }
        if self.mode == SampleMode::Sde && !(self.sde_noise_scale > 0.0) {
            return Err(Error::Config("SDE mode requires a positive noise scale".into()));
        }
        Ok(())
    }
}

/// Per-component affine map between raw controls and the [−1, 1] box the
/// policy is trained in: normalized = (raw − offset)·scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionNorm {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl ActionNorm {
    /// The control box is symmetric, so the map is a pure rescale.
    pub fn from_params(p: &CarParams) -> Self {
        Self { offset: [0.0, 0.0], scale: [1.0 / p.dd_max, 1.0 / p.ddelta_max] }
    }

    /// Rescale each component by a high quantile of its data magnitude, so
    /// expert actions fill the training box instead of huddling near zero.
    /// The tail above the quantile trains (and denormalizes) fine; it is
    /// merely allowed outside [−1, 1].
    pub fn fit<'a>(actions: impl Iterator<Item = &'a CarAction>) -> Self {
        let mut mags: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for a in actions {
            mags[0].push(a.dd.abs());
            mags[1].push(a.ddelta.abs());
        }
        let mut scale = [1.0f64; 2];
        for (i, m) in mags.iter_mut().enumerate() {
            if m.is_empty() {
                continue;
            }
            m.sort_by(|a, b| a.total_cmp(b));
            let q = m[((m.len() - 1) as f64 * 0.995).round() as usize];
            scale[i] = 1.0 / q.max(1e-9);
        }
        Self { offset: [0.0, 0.0], scale }
    }

    pub fn normalize(&self, a: &CarAction) -> [f64; 2] {
        [(a.dd - self.offset[0]) * self.scale[0], (a.ddelta - self.offset[1]) * self.scale[1]]
    }

    pub fn denormalize(&self, n: [f64; 2]) -> CarAction {
        CarAction::new(n[0] / self.scale[0] + self.offset[0], n[1] / self.scale[1] + self.offset[1])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.offset.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite() && *v != 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("degenerate action normalization".into()))
        }
    }
}

/// Integrate the velocity field and return the normalized pre-clamp chunk
/// of length 2·H (interleaved [dD₀, dδ₀, dD₁, dδ₁, …]).
pub fn sample_chunk_normalized(
    net: &PolicyNet,
    cond: &[f64],
    cfg: &SampleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let dim = net.output_dim();
    let mut u: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let dt = 1.0 / cfg.k as f64;
    for i in 0..cfg.k {
        let t = i as f64 * dt;
        let v = net.forward(&u, t, cond)?;
        for (ui, vi) in u.iter_mut().zip(v.iter()) {
            *ui += vi * dt;
        }
        if cfg.mode == SampleMode::Sde {
            let g = cfg.sde_noise_scale * (1.0 - t);
            let sq = dt.sqrt();
            for ui in u.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *ui += g * sq * e;
            }
        }
    }
    if cfg.final_noise > 0.0 {
        for ui in u.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *ui += cfg.final_noise * e;
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sampled chunk"));
    }
    Ok(u)
}

/// Sample one H-action chunk, denormalized and clamped to the control box.
pub fn sample_actions(
    net: &PolicyNet,
    cond: &[f64],
    cfg: &SampleConfig,
    norm: &ActionNorm,
    params: &CarParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CarAction>> {
    let u = sample_chunk_normalized(net, cond, cfg, rng)?;
    Ok(u.chunks_exact(2).map(|c| norm.denormalize([c[0], c[1]]).clamped(params)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn pinned_net(h: usize, cond_dim: usize, seed: u64, scale: f64) -> PolicyNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = PolicyNet::input_dim(h, cond_dim);
        PolicyNet::random(&[input, 16, 2 * h], h, cond_dim, scale, &mut rng).unwrap()
    }

    #[test]
    fn single_ode_step_is_u0_plus_field() {
        let net = pinned_net(2, 3, 1, 0.8);
        let cond = [0.2, -0.4, 1.0];
        let cfg = SampleConfig { k: 1, mode: SampleMode::Ode, final_noise: 0.0, ..SampleConfig::default() };
        // Replicate the u0 draw with the same seed.
        let mut rng1 = ChaCha8Rng::seed_from_u64(99);
        let got = sample_chunk_normalized(&net, &cond, &cfg, &mut rng1).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let u0: Vec<f64> = (0..4).map(|_| rng2.sample::<f64, _>(StandardNormal)).collect();
        let v = net.forward(&u0, 0.0, &cond).unwrap();
        for i in 0..4 {
            assert_relative_eq!(got[i], u0[i] + v[i], max_relative = 1e-14);
        }
    }

    #[test]
    fn euler_is_exact_for_constant_fields_any_k() {
        // A net with zero hidden weights and constant output bias is a
        // constant field; Euler must integrate it exactly for every K.
        let h = 2;
        let mut net = PolicyNet::zeros(&[PolicyNet::input_dim(h, 1), 4, 2 * h], h, 1).unwrap();
        let c = [0.3, -0.7, 1.1, 0.05];
        let last = net.layers.len() - 1;
        net.layers[last].b = c.to_vec();
        let cond = [0.0];
        let mut results = Vec::new();
        for k in [1usize, 2, 4, 8, 32] {
            let cfg = SampleConfig { k, mode: SampleMode::Ode, final_noise: 0.0, ..SampleConfig::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let got = sample_chunk_normalized(&net, &cond, &cfg, &mut rng).unwrap();
            results.push(got);
        }
        // All K agree with u0 + c to 1e-12.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u0: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for got in &results {
            for i in 0..4 {
                assert_relative_eq!(got[i], u0[i] + c[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn outputs_respect_control_bounds() {
        let net = pinned_net(4, 2, 3, 2.0);
        let p = CarParams::default();
        let norm = ActionNorm::from_params(&p);
        let cfg = SampleConfig { k: 2, mode: SampleMode::Sde, sde_noise_scale: 1.0, final_noise: 0.2, ..SampleConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let acts = sample_actions(&net, &[0.1, 0.9], &cfg, &norm, &p, &mut rng).unwrap();
            assert_eq!(acts.len(), 4);
            for a in acts {
                assert!(a.dd.abs() <= p.dd_max && a.ddelta.abs() <= p.ddelta_max);
                assert!(a.is_finite());
            }
        }
    }

    #[test]
    fn normalization_round_trips() {
        let p = CarParams::default();
        let norm = ActionNorm::from_params(&p);
        let a = CarAction::new(-2.3, 1.7);
        let n = norm.normalize(&a);
        assert!(n[0].abs() <= 1.0 && n[1].abs() <= 1.0);
        let back = norm.denormalize(n);
        assert_relative_eq!(back.dd, a.dd, max_relative = 1e-14);
        assert_relative_eq!(back.ddelta, a.ddelta, max_relative = 1e-14);
    }

    fn coverage_cells(chunks: &[Vec<f64>]) -> usize {
        // 8×8 partition of [−2,2]² over the first two coordinates.
        let mut hit = [[false; 8]; 8];
        for c in chunks {
            let ix = ((c[0] + 2.0) / 0.5).floor();
            let iy = ((c[1] + 2.0) / 0.5).floor();
            if (0.0..8.0).contains(&ix) && (0.0..8.0).contains(&iy) {
                hit[iy as usize][ix as usize] = true;
            }
        }
        hit.iter().flatten().filter(|h| **h).count()
    }

    #[test]
    fn sde_and_final_noise_have_full_support() {
        let net = pinned_net(2, 2, 11, 0.5);
        let cond = [0.4, -0.2];
        for cfg in [
            SampleConfig { k: 4, mode: SampleMode::Sde, sde_noise_scale: 0.5, final_noise: 0.0, ..SampleConfig::default() },
            SampleConfig { k: 1, mode: SampleMode::Ode, final_noise: 0.1, ..SampleConfig::default() },
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(2024);
            let draws: Vec<Vec<f64>> = (0..100_000)
                .map(|_| sample_chunk_normalized(&net, &cond, &cfg, &mut rng).unwrap())
                .collect();
            assert_eq!(coverage_cells(&draws), 64, "mode {:?}", cfg.mode);
        }
    }

    #[test]
    fn fixed_seed_reproduces_chunks() {
        let net = pinned_net(3, 2, 13, 1.0);
        let cfg = SampleConfig { k: 3, mode: SampleMode::Sde, sde_noise_scale: 0.7, final_noise: 0.05, ..SampleConfig::default() };
        let mut r1 = ChaCha8Rng::seed_from_u64(321);
        let mut r2 = ChaCha8Rng::seed_from_u64(321);
        let a = sample_chunk_normalized(&net, &[0.0, 1.0], &cfg, &mut r1).unwrap();
        let b = sample_chunk_normalized(&net, &[0.0, 1.0], &cfg, &mut r2).unwrap();
        assert_eq!(a, b);
    }
}
