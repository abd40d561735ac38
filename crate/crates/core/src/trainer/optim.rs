use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{Result, TrainerError};
use crate::util::{push_f32s, push_f64s, ByteReader};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay:
///
/// `p <- p - lr * wd * p`, then `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`
/// with bias-corrected first and second moments. Decay applies only to
/// parameters of rank 2 or more.
#[derive(Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(vars: &[Var], config: AdamWConfig) -> Result<Self> {
        let zeros = |v: &Var| v.as_tensor().zeros_like();
        Ok(Self {
            config,
            step: 0,
            m: vars.iter().map(zeros).collect::<candle_core::Result<_>>()?,
            v: vars.iter().map(zeros).collect::<candle_core::Result<_>>()?,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update with gradients taken from `grads`, each scaled by
    /// `grad_scale`. Parameters without a gradient are treated as having a
    /// zero gradient.
    pub fn step(&mut self, vars: &[Var], grads: &GradStore, lr: f64, grad_scale: f64) -> Result<()> {
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, var) in vars.iter().enumerate() {
            let p = var.as_tensor().detach();
            let g = match grads.get(var.as_tensor()) {
                Some(g) => (g.detach() * grad_scale)?,
                None => p.zeros_like()?,
            };
            let m = ((&self.m[i] * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
            let v = ((&self.v[i] * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let mut next = p;
            if c.weight_decay > 0.0 && next.rank() >= 2 {
                next = (&next * (1.0 - lr * c.weight_decay))?;
            }
            let denom = ((&v / bc2)?.sqrt()? + c.eps)?;
            let update = ((&m / bc1)? / denom)?;
            next = (next - (update * lr)?)?;
            var.set(&next)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    /// `u64 step | u32 tensor count | f64 moments (m then v per tensor)` for
    /// f64 parameters, f32 otherwise.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u32).to_le_bytes());
        for (m, v) in self.m.iter().zip(&self.v) {
            for t in [m, v] {
                let flat = t.flatten_all()?;
                if t.dtype() == DType::F64 {
                    push_f64s(&mut out, &flat.to_vec1::<f64>()?);
                } else {
                    push_f32s(&mut out, &flat.to_dtype(DType::F32)?.to_vec1::<f32>()?);
                }
            }
        }
        Ok(out)
    }

    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let corrupt = |e: std::io::Error| TrainerError::Corrupt(e.to_string());
        let mut r = ByteReader::new(bytes);
        let step = r.u64().map_err(corrupt)?;
        let n = r.u32().map_err(corrupt)? as usize;
        if n != self.m.len() {
            return Err(TrainerError::Corrupt("optimizer tensor count mismatch".into()));
        }
        for i in 0..n {
            for slot in 0..2 {
                let target = if slot == 0 { &self.m[i] } else { &self.v[i] };
                let (shape, dtype, count) = (target.shape().clone(), target.dtype(), target.elem_count());
                let dev = target.device().clone();
                let t = if dtype == DType::F64 {
                    Tensor::from_vec(r.f64_vec(count).map_err(corrupt)?, shape, &dev)?
                } else {
                    Tensor::from_vec(r.f32_vec(count).map_err(corrupt)?, shape, &dev)?.to_dtype(dtype)?
                };
                if slot == 0 {
                    self.m[i] = t;
                } else {
                    self.v[i] = t;
                }
            }
        }
        if r.remaining() != 0 {
            return Err(TrainerError::Corrupt("trailing optimizer bytes".into()));
        }
        self.step = step;
        Ok(())
    }
}

/// Global L2 norm over all gradients present in `grads`.
pub fn global_grad_norm(vars: &[Var], grads: &GradStore) -> Result<f64> {
    let mut total = 0.0;
    for var in vars {
        if let Some(g) = grads.get(var.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    Ok(total.sqrt())
}

/// Scale that brings the global norm down to `max_norm` (1 when already below).
pub fn clip_scale(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm {
        max_norm / (norm + 1e-6)
    } else {
        1.0
    }
}
