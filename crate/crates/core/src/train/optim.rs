use ndarray::Array2;

use crate::autodiff::ParamId;
use crate::model::ParamStore;
use crate::{Error, Result, Scalar};

/// Hyperparameters of [`AdamW`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// Adam with decoupled weight decay:
/// `p ← p − lr·(m̂ / (√v̂ + ε) + wd·p)`.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Option<Array2<T>>>,
    v: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, n_params: usize) -> Self {
        Self {
            cfg,
            step: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    /// First and second moments of parameter `id`, once it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&Array2<T>, &Array2<T>)> {
        Some((self.m.get(id)?.as_ref()?, self.v.get(id)?.as_ref()?))
    }

    /// One update of every parameter in `weights`. Parameters without a
    /// gradient are treated as having a zero gradient, so they still decay.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        weights: &[ParamId],
        grads: &[(ParamId, Array2<T>)],
    ) -> Result<()> {
        for (id, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {}",
                    store.get(*id).name
                )));
            }
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, wd, eps) = (T::of(c.lr), T::of(c.weight_decay), T::of(c.eps));
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        for &id in weights {
            let p = store.value_mut(id);
            let zero = || Array2::zeros(p.dim());
            let m = self.m[id].get_or_insert_with(zero);
            let v = self.v[id].get_or_insert_with(zero);
            let grad = grads.iter().find(|(g_id, _)| *g_id == id).map(|(_, g)| g);
            match grad {
                Some(g) => ndarray::Zip::from(&mut *m)
                    .and(&mut *v)
                    .and(g)
                    .for_each(|m, v, &g| {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                    }),
                None => {
                    m.mapv_inplace(|x| b1 * x);
                    v.mapv_inplace(|x| b2 * x);
                }
            }
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let update = (m * inv_bc1) / ((v * inv_bc2).sqrt() + eps) + wd * *p;
                    *p -= lr * update;
                });
        }
        Ok(())
    }
}

/// Scales the gradients in place so their global L2 norm is at most
/// `max_norm`; returns the norm before scaling.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [(ParamId, Array2<T>)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}
