//! Adam optimizer with bias correction.

use super::tensor::Tensor;
use crate::{invalid_state, Result, Scalar};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers are keyed by position in the parameter list, so callers
/// must pass the same parameters in the same order on every step.
pub struct Adam<S: Scalar> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update using each tensor's accumulated gradient.
    /// Gradients are not cleared; callers zero them at batch start.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
            self.v = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
        {
            return Err(invalid_state!(
                "optimizer state does not match the parameter list"
            ));
        }
        self.t += 1;
        let b1 = S::of(self.cfg.beta1);
        let b2 = S::of(self.cfg.beta2);
        let one = S::one();
        let bc1 = S::of(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = S::of(1.0 - self.cfg.beta2.powi(self.t as i32));
        let lr = S::of(self.cfg.lr);
        let eps = S::of(self.cfg.eps);
        for (pi, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            let n = p.numel();
            let g: Vec<S> = p.grad().to_vec();
            let w = p.data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] = w[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Serializes moments and step count for checkpoints.
    pub fn state_entries(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = vec![("opt.t".to_string(), vec![1], vec![self.t as f64])];
        for (i, m) in self.m.iter().enumerate() {
            out.push((
                format!("opt.m.{i}"),
                vec![m.len()],
                m.iter().map(|v| v.as_f64()).collect(),
            ));
        }
        for (i, v) in self.v.iter().enumerate() {
            out.push((
                format!("opt.v.{i}"),
                vec![v.len()],
                v.iter().map(|x| x.as_f64()).collect(),
            ));
        }
        out
    }

    /// Restores moments and step count saved by `state_entries`.
    pub fn load_state(&mut self, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let mut m: Vec<(usize, Vec<S>)> = Vec::new();
        let mut v: Vec<(usize, Vec<S>)> = Vec::new();
        for (name, _, data) in entries {
            if name == "opt.t" {
                self.t = data[0] as u64;
            } else if let Some(idx) = name.strip_prefix("opt.m.") {
                let idx: usize = idx
                    .parse()
                    .map_err(|_| invalid_state!("bad optimizer entry name {name}"))?;
                m.push((idx, data.iter().map(|&x| S::of(x)).collect()));
            } else if let Some(idx) = name.strip_prefix("opt.v.") {
                let idx: usize = idx
                    .parse()
                    .map_err(|_| invalid_state!("bad optimizer entry name {name}"))?;
                v.push((idx, data.iter().map(|&x| S::of(x)).collect()));
            } else {
                return Err(invalid_state!("unknown optimizer entry {name}"));
            }
        }
        m.sort_by_key(|(i, _)| *i);
        v.sort_by_key(|(i, _)| *i);
        self.m = m.into_iter().map(|(_, d)| d).collect();
        self.v = v.into_iter().map(|(_, d)| d).collect();
        Ok(())
    }
}
