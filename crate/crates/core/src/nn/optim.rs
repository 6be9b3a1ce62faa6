use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::error::Result;

/// Cosine annealing: `eta_min + (lr - eta_min) * (1 + cos(pi * e / t_max)) / 2`.
pub fn cosine_lr(base_lr: f64, eta_min: f64, t_max: usize, epoch: usize) -> f64 {
    if t_max == 0 {
        return base_lr;
    }
    let e = epoch as f64 / t_max as f64;
    eta_min + (base_lr - eta_min) * (1.0 + (std::f64::consts::PI * e).cos()) / 2.0
}

/// Adam with L2 weight decay added to the gradient.
#[derive(Debug)]
pub struct Adam {
    params: Vec<(String, Var)>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, lr: f64, weight_decay: f64) -> Self {
        Self {
            params,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Global L2 norm of the gradients of the optimized parameters.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0f64;
        for (_, v) in &self.params {
            if let Some(g) = grads.get(v.as_tensor()) {
                sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// Applies one update. Gradients are rescaled so their global norm does
    /// not exceed `clip` when given. Returns the pre-clipping norm.
    pub fn step(&mut self, grads: &GradStore, clip: Option<f64>) -> Result<f64> {
        let norm = self.grad_norm(grads)?;
        let scale = match clip {
            Some(c) if norm > c && norm.is_finite() => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var) in &self.params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let theta = var.as_tensor().detach();
            let mut g = g.detach();
            if scale != 1.0 {
                g = (g * scale)?;
            }
            if self.weight_decay != 0.0 {
                g = (g + (&theta * self.weight_decay)?)?;
            }
            let (m, v) = match self.moments.get(name) {
                Some((m, v)) => (m.clone(), v.clone()),
                None => (theta.zeros_like()?, theta.zeros_like()?),
            };
            let m = ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(theta - (update * self.lr)?)?)?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(norm)
    }

    /// Optimizer state for checkpointing, as `adam.m.<name>` / `adam.v.<name>`.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, (m, v)) in &self.moments {
            out.insert(format!("adam.m.{name}"), m.clone());
            out.insert(format!("adam.v.{name}"), v.clone());
        }
        out
    }

    pub fn load_state(&mut self, tensors: &BTreeMap<String, Tensor>, step: usize) {
        self.step = step;
        self.moments.clear();
        for (name, _) in &self.params {
            if let (Some(m), Some(v)) = (
                tensors.get(&format!("adam.m.{name}")),
                tensors.get(&format!("adam.v.{name}")),
            ) {
                self.moments.insert(name.clone(), (m.clone(), v.clone()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn cosine_endpoints() {
        assert!((cosine_lr(2e-4, 1e-6, 300, 0) - 2e-4).abs() < 1e-15);
        assert!((cosine_lr(2e-4, 1e-6, 300, 300) - 1e-6).abs() < 1e-15);
        let mid = cosine_lr(2e-4, 1e-6, 300, 150);
        assert!((mid - (1e-6 + (2e-4 - 1e-6) / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let dev = Device::Cpu;
        let x = Var::new(&[3.0f64, -2.0], &dev).unwrap();
        let mut opt = Adam::new(vec![("x".into(), x.clone())], 0.1, 0.0);
        for _ in 0..300 {
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            let g = loss.backward().unwrap();
            opt.step(&g, None).unwrap();
        }
        let v = x.as_tensor().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|a| a.abs() < 1e-2), "{v:?}");
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let dev = Device::Cpu;
        let x = Var::new(&[100.0f64], &dev).unwrap();
        let mut opt = Adam::new(vec![("x".into(), x.clone())], 0.1, 0.0);
        let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
        let g = loss.backward().unwrap();
        let norm = opt.step(&g, Some(1.0)).unwrap();
        assert!((norm - 200.0).abs() < 1e-9);
    }
}
