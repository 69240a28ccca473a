//! Adam with global-norm gradient clipping and decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::store::ParamStore;
use super::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient; applied as `p -= lr * wd * p`.
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; zero or negative disables clipping.
    pub clip: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = clip;
        self
    }
}

/// First/second moment accumulators, lazily allocated per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<E> {
    m: BTreeMap<String, Tensor<E>>,
    v: BTreeMap<String, Tensor<E>>,
    step: u64,
}

impl<E: Scalar> AdamState<E> {
    pub fn new() -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one update. Returns the pre-clip global gradient norm.
///
/// Moment accumulation and the parameter update run in the store's element
/// type; the norm reduction runs in f64 so clipping behaves identically for
/// f32 and f64 models.
pub fn adam_step<E: Scalar>(
    store: &mut ParamStore<E>,
    grads: &BTreeMap<String, Tensor<E>>,
    cfg: &AdamConfig,
    state: &mut AdamState<E>,
) -> f64 {
    let mut sq_sum = 0.0f64;
    for g in grads.values() {
        for &gv in g.data() {
            let x = gv.to_f64();
            sq_sum += x * x;
        }
    }
    let norm = sq_sum.sqrt();
    let scale = if cfg.clip > 0.0 && norm > cfg.clip {
        cfg.clip / norm
    } else {
        1.0
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (E::from_f64(cfg.beta1), E::from_f64(cfg.beta2));
    let (ob1, ob2) = (E::from_f64(1.0 - cfg.beta1), E::from_f64(1.0 - cfg.beta2));
    let scale_e = E::from_f64(scale);
    let lr_bc1 = E::from_f64(cfg.lr / bc1);
    let inv_sqrt_bc2 = E::from_f64(1.0 / bc2.sqrt());
    let eps = E::from_f64(cfg.eps);
    let decay = E::from_f64(cfg.lr * cfg.weight_decay);

    for (name, grad) in grads {
        let p = store.get_mut(name);
        assert_eq!(p.shape(), grad.shape(), "gradient shape for {name}");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = gv * scale_e;
            *mv = b1 * *mv + ob1 * g;
            *vv = b2 * *vv + ob2 * g * g;
            let vhat_sqrt = (*vv).sqrt() * inv_sqrt_bc2;
            *pv = *pv - lr_bc1 * *mv / (vhat_sqrt + eps) - decay * *pv;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_roughly_lr() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0));
        let mut state = AdamState::new();
        let cfg = AdamConfig::new(0.1);
        let norm = adam_step(&mut store, &grads, &cfg, &mut state);
        assert!((norm - 1.0).abs() < 1e-12);
        let w = store.get("w").item();
        assert!((w - 0.9).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn clipping_matches_prescaled_gradients() {
        let run = |g: Vec<f64>, clip: f64| {
            let mut store: ParamStore<f64> = ParamStore::new();
            store.insert("a", Tensor::row(vec![0.5, -0.5]));
            let mut grads = BTreeMap::new();
            grads.insert("a".to_string(), Tensor::row(g));
            let mut state = AdamState::new();
            let cfg = AdamConfig::new(0.05).with_clip(clip);
            let norm = adam_step(&mut store, &grads, &cfg, &mut state);
            (norm, store.get("a").data().to_vec())
        };
        let (norm, clipped) = run(vec![3.0, 4.0], 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let (_, prescaled) = run(vec![0.6, 0.8], 0.0);
        assert_eq!(clipped, prescaled);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient_signal() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.0));
        let mut state = AdamState::new();
        let cfg = AdamConfig::new(0.5).with_weight_decay(0.1);
        adam_step(&mut store, &grads, &cfg, &mut state);
        let w = store.get("w").item();
        assert!((w - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-12, "w = {w}");
    }
}
