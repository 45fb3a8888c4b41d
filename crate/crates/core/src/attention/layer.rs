use rand::Rng;

use super::masa::{lce, masa_decomposed, masa_full};
use crate::decay::{gamma_schedule, DecayRate, DecaySpec, GridShape};
use crate::error::{config_err, dim_err, Result};
use crate::params::HasParams;
use crate::tensor::Tensor;

/// Shape and decay settings of one multi-head MaSA layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MaSAConfig {
    pub dim: usize,
    pub num_heads: usize,
    pub decomposed: bool,
    pub decay: DecaySpec,
    /// Side of the depthwise LCE kernel (odd).
    pub lce_kernel: usize,
    /// Scale logits by `1/sqrt(head_dim)` before the softmax.
    pub scale_logits: bool,
}

impl MaSAConfig {
    /// Layer with a `gamma_schedule(a, b, num_heads)` decay, 5×5 LCE and
    /// scaled logits.
    pub fn new(dim: usize, num_heads: usize, decomposed: bool, a: f64, b: f64) -> Result<MaSAConfig> {
        if num_heads == 0 {
            return config_err("MaSA needs at least one head");
        }
        let cfg = MaSAConfig {
            dim,
            num_heads,
            decomposed,
            decay: gamma_schedule(a, b, num_heads)?,
            lce_kernel: 5,
            scale_logits: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_heads == 0 || !self.dim.is_multiple_of(self.num_heads) {
            return config_err(format!(
                "embedding dim {} is not divisible into {} heads",
                self.dim, self.num_heads
            ));
        }
        if self.decay.num_heads() != self.num_heads {
            return config_err(format!(
                "decay schedule has {} rates for {} heads",
                self.decay.num_heads(),
                self.num_heads
            ));
        }
        if self.lce_kernel.is_multiple_of(2) {
            return config_err(format!("LCE kernel size {} must be odd", self.lce_kernel));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads
    }

    pub fn num_params(&self) -> usize {
        4 * self.dim * self.dim + self.dim * self.lce_kernel * self.lce_kernel
    }
}

/// Projection weights and LCE kernel of one MaSA layer.
#[derive(Clone, Debug)]
pub struct MaSAParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub lce_kernel: Tensor,
}

impl MaSAParams {
    /// Truncated-normal (σ = 0.02) projections and LCE kernel.
    pub fn init<R: Rng + ?Sized>(config: &MaSAConfig, rng: &mut R) -> MaSAParams {
        let (c, k) = (config.dim, config.lce_kernel);
        MaSAParams {
            wq: Tensor::trunc_normal(&[c, c], 0.02, rng),
            wk: Tensor::trunc_normal(&[c, c], 0.02, rng),
            wv: Tensor::trunc_normal(&[c, c], 0.02, rng),
            wo: Tensor::trunc_normal(&[c, c], 0.02, rng),
            lce_kernel: Tensor::trunc_normal(&[c, k, k], 0.02, rng),
        }
    }

    pub fn zeros(config: &MaSAConfig) -> MaSAParams {
        let (c, k) = (config.dim, config.lce_kernel);
        MaSAParams {
            wq: Tensor::zeros(&[c, c]),
            wk: Tensor::zeros(&[c, c]),
            wv: Tensor::zeros(&[c, c]),
            wo: Tensor::zeros(&[c, c]),
            lce_kernel: Tensor::zeros(&[c, k, k]),
        }
    }

    pub fn check(&self, config: &MaSAConfig) -> Result<()> {
        let (c, k) = (config.dim, config.lce_kernel);
        for (name, t) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if t.shape() != [c, c] {
                return config_err(format!("{name} has shape {:?}, expected [{c}, {c}]", t.shape()));
            }
        }
        if self.lce_kernel.shape() != [c, k, k] {
            return config_err(format!(
                "LCE kernel has shape {:?}, expected [{c}, {k}, {k}]",
                self.lce_kernel.shape()
            ));
        }
        Ok(())
    }
}

impl HasParams for MaSAParams {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}wq"), &self.wq);
        f(&format!("{prefix}wk"), &self.wk);
        f(&format!("{prefix}wv"), &self.wv);
        f(&format!("{prefix}wo"), &self.wo);
        f(&format!("{prefix}lce"), &self.lce_kernel);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}wq"), &mut self.wq);
        f(&format!("{prefix}wk"), &mut self.wk);
        f(&format!("{prefix}wv"), &mut self.wv);
        f(&format!("{prefix}wo"), &mut self.wo);
        f(&format!("{prefix}lce"), &mut self.lce_kernel);
    }
}

/// Multi-head MaSA with LCE: `(concat_i MaSA_i(X) + LCE(V)) · Wo`.
///
/// Head `i` attends with its own slice of `Q = X Wq`, `K = X Wk`,
/// `V = X Wv` and decay rate `γ_i`. LCE runs on the full-width `V`.
pub fn masa_layer_forward(x: &Tensor, params: &MaSAParams, config: &MaSAConfig, grid: GridShape) -> Result<Tensor> {
    config.validate()?;
    params.check(config)?;
    if x.rank() != 2 || x.shape()[1] != config.dim {
        return dim_err(format!("MaSA layer of width {} got input {:?}", config.dim, x.shape()));
    }
    let q = x.matmul(&params.wq)?;
    let k = x.matmul(&params.wk)?;
    let v = x.matmul(&params.wv)?;
    let hd = config.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let heads = (0..config.num_heads)
        .map(|i| {
            let mut qh = q.narrow_last(i * hd, hd)?;
            if config.scale_logits {
                qh = qh.scale(scale)?;
            }
            let kh = k.narrow_last(i * hd, hd)?;
            let vh = v.narrow_last(i * hd, hd)?;
            let decay = DecayRate::Gamma(config.decay.gamma(i));
            if config.decomposed {
                masa_decomposed(&qh, &kh, &vh, grid, decay)
            } else {
                masa_full(&qh, &kh, &vh, grid, decay)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let attended = Tensor::concat_last(&heads)?;
    let local = lce(&v, grid, &params.lce_kernel)?;
    attended.add(&local)?.matmul(&params.wo)
}

/// Configuration and weights of one MaSA layer.
#[derive(Clone, Debug)]
pub struct MaSA {
    pub config: MaSAConfig,
    pub params: MaSAParams,
}

impl MaSA {
    pub fn forward(&self, x: &Tensor, grid: GridShape) -> Result<Tensor> {
        masa_layer_forward(x, &self.params, &self.config, grid)
    }
}

impl HasParams for MaSA {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.params.visit_params(prefix, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.params.visit_params_mut(prefix, f);
    }
}
