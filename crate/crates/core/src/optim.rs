//! SGD with heavy-ball momentum and the warmup/decay schedule.

use std::collections::BTreeMap;

use crate::model::ModelParams;
use crate::tape::Mat;

/// `buf ← μ·buf + g; θ ← θ − lr·buf`, buffers created lazily per parameter.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    buffers: BTreeMap<String, Mat>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            buffers: BTreeMap::new(),
        }
    }

    /// Applies one update. Parameters missing from `grads` are left alone.
    /// Updated values are rounded to `f32` storage precision.
    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Mat>, lr: f64) {
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let update = if self.momentum == 0.0 {
                g.clone()
            } else {
                match self.buffers.get_mut(name) {
                    Some(buf) => {
                        buf.zip_mut_with(g, |b, &gv| *b = self.momentum * *b + gv);
                        buf.clone()
                    }
                    None => {
                        self.buffers.insert(name.clone(), g.clone());
                        g.clone()
                    }
                }
            };
            p.zip_mut_with(&update, |pv, &u| *pv = f64::from((*pv - lr * u) as f32));
        }
    }
}

/// Plain SGD-with-momentum update for a free-standing tensor (used by the
/// linear probe).
pub fn sgd_update(param: &mut Mat, buf: &mut Mat, grad: &Mat, lr: f64, momentum: f64) {
    buf.zip_mut_with(grad, |b, &g| *b = momentum * *b + g);
    param.zip_mut_with(buf, |p, &b| *p -= lr * b);
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to
/// 0 at step `total`.
pub fn warmup_decay_lr(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    peak * (total - step) as f64 / (total - warmup) as f64
}
