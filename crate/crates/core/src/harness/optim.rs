use ndarray::{Array2, Zip};

use super::config::OptimConfig;
use crate::net::ParamStore;
use crate::tape::ParamGrads;

/// Cosine decay from `lr` to `lr * min_lr_ratio` over `steps`.
pub fn learning_rate(cfg: &OptimConfig, step: usize) -> f64 {
    if cfg.steps == 0 {
        return cfg.lr;
    }
    let t = (step as f64 / cfg.steps as f64).min(1.0);
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine)
}

pub fn grad_norm(grads: &ParamGrads) -> f64 {
    grads
        .0
        .iter()
        .flatten()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.0.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

/// Adam with bias correction; moments are kept per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<_> = params
            .values()
            .iter()
            .map(|p| Array2::zeros(p.dim()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Unreached parameters count as zero gradient.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &ParamGrads,
        cfg: &OptimConfig,
        lr: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            match &grads.0[i] {
                Some(g) => {
                    Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    });
                }
                None => {
                    m.mapv_inplace(|x| cfg.beta1 * x);
                    v.mapv_inplace(|x| cfg.beta2 * x);
                }
            }
            Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            });
        }
    }
}
