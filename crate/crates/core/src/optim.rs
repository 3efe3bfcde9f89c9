//! AdamW with decoupled weight decay, a one-cycle schedule and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::nn::{Parameters, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_fraction: f64,
    /// Final learning rate is `lr / final_div`.
    pub final_div: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_fraction: 0.05,
            final_div: 100.0,
            clip_norm: 0.5,
        }
    }
}

/// Linear warmup from `lr / 25` to `lr`, then cosine annealing to `lr / final_div`.
pub fn one_cycle_lr(cfg: &OptimConfig, step: usize, total: usize) -> f64 {
    let total = total.max(1);
    let warm = ((cfg.warmup_fraction * total as f64).round() as usize).max(1);
    let start = cfg.lr / 25.0;
    let end = cfg.lr / cfg.final_div;
    if step < warm {
        start + (cfg.lr - start) * step as f64 / warm as f64
    } else {
        let span = (total - warm).max(1) as f64;
        let p = ((step - warm) as f64 / span).min(1.0);
        end + 0.5 * (cfg.lr - end) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

pub fn global_norm<T: Real, P: Parameters<T>>(grads: &P) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|v| {
            let v = v.to_f64().unwrap();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Scales `grads` so the global L2 norm is at most `max_norm`; returns the
/// norm after clipping.
pub fn clip_grad_norm<T: Real, P: Parameters<T>>(grads: &mut P, max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n > 0.0 {
        let s: T = T::from(max_norm / n).unwrap();
        for (_, d) in grads.tensors_mut() {
            d.iter_mut().for_each(|v| *v *= s);
        }
        max_norm
    } else {
        n
    }
}

/// Moment buffers are laid out in the parameter visiting order.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: OptimConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub step: usize,
}

fn decays(name: &str) -> bool {
    !name.ends_with("bias")
}

impl<T: Real> AdamW<T> {
    pub fn new<P: Parameters<T>>(params: &P, cfg: OptimConfig) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.data.len()])
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn update<P: Parameters<T>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.step += 1;
        let c = &self.cfg;
        let b1 = c.beta1;
        let b2 = c.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let f = |x: f64| T::from(x).unwrap();
        let (b1t, b2t, eps) = (f(b1), f(b2), f(c.eps));
        let (one_b1, one_b2) = (f(1.0 - b1), f(1.0 - b2));
        let step_size = f(lr / bc1);
        let inv_bc2 = f(1.0 / bc2);
        let decay = f(1.0 - lr * c.weight_decay);
        let gs = grads.tensors();
        for (i, ((name, p), g)) in params.tensors_mut().into_iter().zip(gs).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let wd = decays(&name);
            for j in 0..p.len() {
                let gj = g.data[j];
                m[j] = b1t * m[j] + one_b1 * gj;
                v[j] = b2t * v[j] + one_b2 * gj * gj;
                if wd {
                    p[j] *= decay;
                }
                p[j] -= step_size * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn one_cycle_shape() {
        let c = OptimConfig { lr: 1.0, ..OptimConfig::default() };
        let total = 1000;
        assert!((one_cycle_lr(&c, 0, total) - 0.04).abs() < 1e-12);
        assert!((one_cycle_lr(&c, 50, total) - 1.0).abs() < 1e-12);
        assert!((one_cycle_lr(&c, total, total) - 0.01).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for s in 50..=total {
            let lr = one_cycle_lr(&c, s, total);
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Linear::<f64>::zeros(2, 2);
        g.weight.fill(3.0);
        g.bias.fill(3.0);
        let after = clip_grad_norm(&mut g, 0.5);
        assert!((after - 0.5).abs() < 1e-12);
        assert!((global_norm(&g) - 0.5).abs() < 1e-12);
        let mut small = Linear::<f64>::zeros(1, 1);
        small.bias[0] = 0.1;
        assert!((clip_grad_norm(&mut small, 0.5) - 0.1).abs() < 1e-12);
        assert_eq!(small.bias[0], 0.1);
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        // Minimize |w - 3|^2 on a 1x1 linear layer without decay.
        let mut p = Linear::<f64>::zeros(1, 1);
        let cfg = OptimConfig { lr: 0.1, weight_decay: 0.0, ..OptimConfig::default() };
        let mut opt = AdamW::new(&p, cfg);
        for _ in 0..500 {
            let mut g = Linear::<f64>::zeros(1, 1);
            g.weight[[0, 0]] = 2.0 * (p.weight[[0, 0]] - 3.0);
            g.bias[0] = 2.0 * (p.bias[0] + 1.0);
            opt.update(&mut p, &g, 0.1);
        }
        assert!((p.weight[[0, 0]] - 3.0).abs() < 1e-2);
        assert!((p.bias[0] + 1.0).abs() < 1e-2);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut p = Linear::<f64>::zeros(1, 1);
        let cfg = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
        let mut opt = AdamW::new(&p, cfg);
        let mut g = Linear::<f64>::zeros(1, 1);
        g.weight[[0, 0]] = 5.0;
        opt.update(&mut p, &g, 1e-3);
        assert!((p.weight[[0, 0]] + 1e-3).abs() < 1e-8);
    }
}
