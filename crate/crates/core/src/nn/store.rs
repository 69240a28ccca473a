//! Named parameter storage and the context that binds parameters to a tape.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::util::Prng;

/// Model parameters keyed by name. Iteration order is the sorted name order,
/// which keeps updates and checkpoints deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E> {
    params: BTreeMap<String, Tensor<E>>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) {
        let name = name.into();
        let prev = self.params.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor<E> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<E> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<E>> {
        self.params.get(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.params.iter()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Matrix with entries drawn from N(0, 1/fan_in).
    pub fn init_normal(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Prng) {
        let std = (1.0 / rows.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| E::from_f64(normal_sample(rng) * std))
            .collect();
        self.insert(name, Tensor::new(vec![rows, cols], data));
    }

    pub fn init_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(rows, cols));
    }

    pub fn init_full(&mut self, name: impl Into<String>, rows: usize, cols: usize, value: f64) {
        self.insert(name, Tensor::full(rows, cols, E::from_f64(value)));
    }

    pub fn to_f32(&self) -> ParamStore<f32> {
        let mut out = ParamStore::new();
        for (name, t) in &self.params {
            let data = t.data().iter().map(|v| v.to_f64() as f32).collect();
            out.insert(name.clone(), Tensor::new(t.shape().to_vec(), data));
        }
        out
    }

    pub fn from_f32(src: &ParamStore<f32>) -> Self {
        let mut out = ParamStore::new();
        for (name, t) in &src.params {
            let data = t.data().iter().map(|&v| E::from_f64(v as f64)).collect();
            out.insert(name.clone(), Tensor::new(t.shape().to_vec(), data));
        }
        out
    }
}

/// Standard normal draw via Box-Muller.
pub fn normal_sample(rng: &mut Prng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 > 1e-300 {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// A tape plus the parameter store it reads from. Parameters are bound
/// lazily by name and each bound name maps to a single tape node, so the
/// backward pass can hand gradients back keyed by parameter name.
pub struct Ctx<'s, E> {
    pub tape: Tape<E>,
    store: &'s ParamStore<E>,
    bound: HashMap<String, Var>,
}

impl<'s, E: Scalar> Ctx<'s, E> {
    pub fn new(store: &'s ParamStore<E>) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            bound: HashMap::new(),
        }
    }

    /// Binds the named parameter to this tape, reusing the node on repeat use.
    pub fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = self.tape.param(self.store.get(name).clone());
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        self.tape.value(v)
    }

    /// Backward pass returning gradients for every bound parameter that the
    /// loss actually reaches.
    pub fn grads(&self, loss: Var) -> BTreeMap<String, Tensor<E>> {
        let mut grads = self.tape.backward(loss);
        let mut out = BTreeMap::new();
        for (name, &var) in &self.bound {
            if let Some(g) = grads.take(var) {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn repeated_binding_accumulates_gradient_once_per_use() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0));
        let mut cx = Ctx::new(&store);
        let a = cx.p("w");
        let b = cx.p("w");
        assert_eq!(a, b);
        let prod = cx.tape.mul(a, b);
        let loss = cx.tape.sum_all(prod);
        let grads = cx.grads(loss);
        assert_eq!(grads["w"].item(), 4.0);
    }

    #[test]
    fn normal_sampler_has_sane_moments() {
        let mut rng = Prng::seed_from_u64(7);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| normal_sample(&mut rng)).collect();
        let mean: f64 = xs.iter().sum::<f64>() / n as f64;
        let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
