//! Velocity-field network: a plain MLP with tanh hidden layers and a linear
//! output, evaluated and differentiated in f64. Weights serialize to a
//! little-endian binary file (magic "FMW1") with f32 storage.
//!
//! Input layout: [u_t (2·H) | t (1 scalar) | condition (condition_dim)].

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major rows×cols weight matrix.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, w: vec![0.0; rows * cols], b: vec![0.0; rows] }
    }

    /// y = W·x + b
    fn affine(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(x.iter()) {
                acc += wi * xi;
            }
            y[r] = acc;
        }
    }
}

/// Per-parameter gradient accumulator with the same shape as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) layers: Vec<Layer>,
}

impl Gradients {
    pub fn scale(&mut self, f: f64) {
        for l in &mut self.layers {
            for w in &mut l.w {
                *w *= f;
            }
            for b in &mut l.b {
                *b *= f;
            }
        }
    }

    /// Flattened view in (layer, weights-then-bias) order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub layers: Vec<Layer>,
    /// Actions per inference chunk; output dim is 2·h.
    pub h: usize,
    pub condition_dim: usize,
}

impl PolicyNet {
    /// Expected input width for the given chunk/condition sizes.
    pub fn input_dim(h: usize, condition_dim: usize) -> usize {
        2 * h + 1 + condition_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.h
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].cols];
        w.extend(self.layers.iter().map(|l| l.rows));
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_widths(widths: &[usize], h: usize, condition_dim: usize) -> Result<()> {
        if widths.len() < 2 {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if widths[0] != Self::input_dim(h, condition_dim) {
            return Err(Error::DimMismatch(format!(
                "input width {} does not match 2*{h}+1+{condition_dim}",
                widths[0]
            )));
        }
        if *widths.last().unwrap() != 2 * h {
            return Err(Error::DimMismatch(format!(
                "output width {} does not match 2*H = {}",
                widths.last().unwrap(),
                2 * h
            )));
        }
        Ok(())
    }

    pub fn zeros(widths: &[usize], h: usize, condition_dim: usize) -> Result<Self> {
        Self::check_widths(widths, h, condition_dim)?;
        let layers = widths.windows(2).map(|w| Layer::zeros(w[1], w[0])).collect();
        Ok(Self { layers, h, condition_dim })
    }

    /// Uniform initialization in ±scale/√fan_in per layer.
    pub fn random(widths: &[usize], h: usize, condition_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut net = Self::zeros(widths, h, condition_dim)?;
        for l in &mut net.layers {
            let lim = scale / (l.cols as f64).sqrt();
            for w in &mut l.w {
                *w = rng.gen_range(-lim..lim);
            }
        }
        Ok(net)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { layers: self.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect() }
    }

    fn input_vec(&self, u: &[f64], t: f64, cond: &[f64]) -> Result<Vec<f64>> {
        if u.len() != 2 * self.h {
            return Err(Error::DimMismatch(format!("chunk len {} != {}", u.len(), 2 * self.h)));
        }
        if cond.len() != self.condition_dim {
            return Err(Error::DimMismatch(format!(
                "condition len {} != {}",
                cond.len(),
                self.condition_dim
            )));
        }
        let mut x = Vec::with_capacity(self.layers[0].cols);
        x.extend_from_slice(u);
        x.push(t);
        x.extend_from_slice(cond);
        Ok(x)
    }

    /// Velocity prediction v_θ(u_t, t | cond).
    pub fn forward(&self, u: &[f64], t: f64, cond: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.input_vec(u, t, cond)?;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.rows];
            l.affine(&x, &mut y);
            if i != last {
                for v in &mut y {
                    *v = v.tanh();
                }
            }
            x = y;
        }
        Ok(x)
    }

    /// Forward pass keeping post-activation values of every layer
    /// (index 0 is the input) for backpropagation.
    pub(crate) fn forward_trace(&self, u: &[f64], t: f64, cond: &[f64]) -> Result<Vec<Vec<f64>>> {
        let x = self.input_vec(u, t, cond)?;
        let mut acts = vec![x];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.rows];
            l.affine(acts.last().unwrap(), &mut y);
            if i != last {
                for v in &mut y {
                    *v = v.tanh();
                }
            }
            acts.push(y);
        }
        Ok(acts)
    }

    /// Accumulate dLoss/dparams into `grads` given dLoss/doutput, reusing
    /// the activations of `forward_trace`. Returns dLoss/dinput.
    pub(crate) fn backward(&self, acts: &[Vec<f64>], d_out: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            // Through the activation: hidden layers stored tanh(z); the
            // output layer is linear.
            if i != self.layers.len() - 1 {
                for (d, a) in delta.iter_mut().zip(acts[i + 1].iter()) {
                    *d *= 1.0 - a * a;
                }
            }
            let g = &mut grads.layers[i];
            let x = &acts[i];
            for r in 0..l.rows {
                g.b[r] += delta[r];
                let grow = &mut g.w[r * l.cols..(r + 1) * l.cols];
                for (gw, xi) in grow.iter_mut().zip(x.iter()) {
                    *gw += delta[r] * xi;
                }
            }
            let mut prev = vec![0.0; l.cols];
            for r in 0..l.rows {
                let row = &l.w[r * l.cols..(r + 1) * l.cols];
                for (p, wi) in prev.iter_mut().zip(row.iter()) {
                    *p += delta[r] * wi;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Apply `update[i]` to every parameter in flatten order.
    pub(crate) fn apply_update(&mut self, mut update: impl FnMut(usize, f64) -> f64) {
        let mut idx = 0;
        for l in &mut self.layers {
            for w in &mut l.w {
                *w = update(idx, *w);
                idx += 1;
            }
            for b in &mut l.b {
                *b = update(idx, *b);
                idx += 1;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"FMW1");
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            buf.extend_from_slice(&(l.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(l.cols as u32).to_le_bytes());
            for w in &l.w {
                buf.extend_from_slice(&(*w as f32).to_le_bytes());
            }
            for b in &l.b {
                buf.extend_from_slice(&(*b as f32).to_le_bytes());
            }
        }
        buf.extend_from_slice(&(self.h as u32).to_le_bytes());
        buf.extend_from_slice(&(self.condition_dim as u32).to_le_bytes());
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(Error::Format("weights file truncated".into()));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        let read_u32 = |off: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()))
        };
        let read_f32 = |off: &mut usize| -> Result<f32> {
            Ok(f32::from_le_bytes(take(off, 4)?.try_into().unwrap()))
        };
        if take(&mut off, 4)? != b"FMW1" {
            return Err(Error::Format("not a FMW1 weights file".into()));
        }
        let layer_count = read_u32(&mut off)? as usize;
        if layer_count == 0 || layer_count > 64 {
            return Err(Error::Format(format!("implausible layer count {layer_count}")));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let rows = read_u32(&mut off)? as usize;
            let cols = read_u32(&mut off)? as usize;
            if rows == 0 || cols == 0 || rows > 1 << 20 || cols > 1 << 20 {
                return Err(Error::Format(format!("implausible layer shape {rows}x{cols}")));
            }
            let mut l = Layer::zeros(rows, cols);
            for w in &mut l.w {
                *w = read_f32(&mut off)? as f64;
            }
            for b in &mut l.b {
                *b = read_f32(&mut off)? as f64;
            }
            layers.push(l);
        }
        let h = read_u32(&mut off)? as usize;
        let condition_dim = read_u32(&mut off)? as usize;
        if off != bytes.len() {
            return Err(Error::Format("trailing bytes in weights file".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(Error::Format(format!(
                    "layer widths do not chain: {} feeds {}",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        if layers[0].cols != Self::input_dim(h, condition_dim) {
            return Err(Error::Format(format!(
                "input width {} does not match H={h}, condition_dim={condition_dim}",
                layers[0].cols
            )));
        }
        if layers.last().unwrap().rows != 2 * h {
            return Err(Error::Format(format!(
                "output width {} does not match H={h}",
                layers.last().unwrap().rows
            )));
        }
        let net = Self { layers, h, condition_dim };
        if net.layers.iter().any(|l| l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite())) {
            return Err(Error::Format("non-finite parameter in weights file".into()));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = PolicyNet::zeros(&[7, 5, 4], 2, 2).unwrap();
        let out = net.forward(&[0.3, -0.8, 1.2, 0.0], 0.4, &[1.0, -1.0]).unwrap();
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn scaling_last_layer_scales_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = PolicyNet::random(&[7, 5, 4], 2, 2, 1.0, &mut rng).unwrap();
        let u = [0.3, -0.8, 1.2, 0.5];
        let cond = [0.7, -0.2];
        let base = net.forward(&u, 0.25, &cond).unwrap();
        let last = net.layers.len() - 1;
        for w in &mut net.layers[last].w {
            *w *= 2.0;
        }
        for b in &mut net.layers[last].b {
            *b *= 2.0;
        }
        let doubled = net.forward(&u, 0.25, &cond).unwrap();
        for (d, b) in doubled.iter().zip(base.iter()) {
            assert_relative_eq!(*d, 2.0 * b, max_relative = 1e-12);
        }
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        // 2-layer net, widths [4, 2, 2], h=... output 2 => h "1" chunk-dim 2.
        let mut net = PolicyNet::zeros(&[4, 2, 2], 1, 1).unwrap();
        net.layers[0].w = vec![
            0.5, -0.25, 0.1, 0.3, // row 0
            -0.4, 0.2, 0.6, -0.1, // row 1
        ];
        net.layers[0].b = vec![0.05, -0.15];
        net.layers[1].w = vec![1.0, -2.0, 0.5, 0.25];
        net.layers[1].b = vec![0.0, 0.2];
        let u: [f64; 2] = [0.4, -0.6];
        let t = 0.3f64;
        let cond = [0.9f64];
        // Hand computation with explicit dot products.
        let x = [u[0], u[1], t, cond[0]];
        let z0 = 0.5 * x[0] - 0.25 * x[1] + 0.1 * x[2] + 0.3 * x[3] + 0.05;
        let z1 = -0.4 * x[0] + 0.2 * x[1] + 0.6 * x[2] - 0.1 * x[3] - 0.15;
        let (a0, a1) = (z0.tanh(), z1.tanh());
        let o0 = 1.0 * a0 - 2.0 * a1;
        let o1 = 0.5 * a0 + 0.25 * a1 + 0.2;
        let out = net.forward(&u, t, &cond).unwrap();
        assert_relative_eq!(out[0], o0, max_relative = 1e-14);
        assert_relative_eq!(out[1], o1, max_relative = 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = PolicyNet::zeros(&[7, 5, 4], 2, 2).unwrap();
        assert!(net.forward(&[0.0; 3], 0.0, &[0.0; 2]).is_err());
        assert!(net.forward(&[0.0; 4], 0.0, &[0.0; 3]).is_err());
        assert!(PolicyNet::zeros(&[6, 5, 4], 2, 2).is_err()); // wrong input width
        assert!(PolicyNet::zeros(&[7, 5, 3], 2, 2).is_err()); // wrong output width
    }

    #[test]
    fn weights_round_trip_through_file() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = PolicyNet::random(&[9, 6, 4], 2, 4, 0.8, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.fmw");
        net.save(&path).unwrap();
        let back = PolicyNet::load(&path).unwrap();
        assert_eq!(back.h, 2);
        assert_eq!(back.condition_dim, 4);
        assert_eq!(back.widths(), net.widths());
        // f32 storage: values agree to f32 precision and are identical on
        // a second save/load.
        for (a, b) in net.layers.iter().zip(back.layers.iter()) {
            for (x, y) in a.w.iter().zip(b.w.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let path2 = dir.path().join("w2.fmw");
        back.save(&path2).unwrap();
        let again = PolicyNet::load(&path2).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn corrupt_weight_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.fmw");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = PolicyNet::random(&[9, 6, 4], 2, 4, 0.8, &mut rng).unwrap();
        net.save(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        std::fs::write(&path, &good[..good.len() - 5]).unwrap();
        assert!(PolicyNet::load(&path).is_err());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(PolicyNet::load(&path).is_err());

        // Break the trailing H so the declared dims no longer match.
        let mut bad_h = good.clone();
        let n = bad_h.len();
        bad_h[n - 8..n - 4].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, &bad_h).unwrap();
        assert!(PolicyNet::load(&path).is_err());
    }
}
