use crate::error::{Error, Result};
use crate::params::HasParams;
use crate::tensor::Tensor;

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// Adam with decoupled weight decay.
///
/// Per parameter: `m ← β1·m + (1-β1)·g`, `v ← β2·v + (1-β2)·g²`, then
/// `p ← p - lr·wd·p - lr·m̂ / (sqrt(v̂) + eps)` with the bias-corrected
/// moments `m̂ = m / (1-β1^t)`, `v̂ = v / (1-β2^t)`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    steps: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> AdamW {
        AdamW { config, first: Vec::new(), second: Vec::new(), shapes: Vec::new(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate used by the next update.
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    fn check_state(&mut self, params: &[Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Usage(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Usage(format!(
                    "parameter {i} has shape {:?} but its gradient has shape {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        if self.steps == 0 {
            self.shapes = params.iter().map(|p| p.shape().to_vec()).collect();
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        } else if self.shapes.len() != params.len()
            || self.shapes.iter().zip(params).any(|(s, p)| s != p.shape())
        {
            return Err(Error::Usage("parameter shapes changed between optimizer steps".into()));
        }
        Ok(())
    }

    /// One update; returns the new parameter values as tracked leaves.
    pub fn step(&mut self, params: &[Tensor], grads: &[Tensor]) -> Result<Vec<Tensor>> {
        self.check_state(params, grads)?;
        self.steps += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        params
            .iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(&mut self.second))
            .map(|((p, g), (m, v))| {
                let mut out = Vec::with_capacity(p.numel());
                for (((&pv, &gv), mv), vv) in p.data().iter().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mv = beta1 * *mv + (1.0 - beta1) * gv;
                    *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                    let update = (*mv / c1) / ((*vv / c2).sqrt() + eps);
                    out.push(pv - lr * weight_decay * pv - lr * update);
                }
                Tensor::param(out, p.shape())
            })
            .collect()
    }

    /// Updates every parameter of `model` from its accumulated gradient.
    /// Parameters that backward did not reach are treated as having zero
    /// gradient.
    pub fn step_model(&mut self, model: &mut impl HasParams) -> Result<()> {
        let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
        let grads: Vec<Tensor> = params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        let mut updated = self.step(&params, &grads)?.into_iter();
        model.visit_params_mut("", &mut |_, t| {
            *t = updated.next().expect("one update per parameter");
        });
        Ok(())
    }
}

/// Cosine decay from `base` at step 0 to zero at `total` steps, no warmup.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = step.min(total) as f64 / total as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}
