//! Central-difference gradient checking utilities. Only meaningful with
//! f64 stores; training code never calls into this module.

use std::collections::BTreeMap;

use super::store::ParamStore;
use super::tensor::Tensor;

/// Numerically differentiates `eval` with respect to every element of every
/// parameter in `store` using central differences.
pub fn fd_param_grads(
    store: &ParamStore<f64>,
    mut eval: impl FnMut(&ParamStore<f64>) -> f64,
) -> BTreeMap<String, Tensor<f64>> {
    let mut work = store.clone();
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    let mut out = BTreeMap::new();
    for name in names {
        let numel = store.get(&name).numel();
        let mut grad = store.get(&name).map(|_| 0.0);
        for i in 0..numel {
            let orig = work.get(&name).data()[i];
            let h = 1e-6 * orig.abs().max(1.0);
            work.get_mut(&name).data_mut()[i] = orig + h;
            let fp = eval(&work);
            work.get_mut(&name).data_mut()[i] = orig - h;
            let fm = eval(&work);
            work.get_mut(&name).data_mut()[i] = orig;
            grad.data_mut()[i] = (fp - fm) / (2.0 * h);
        }
        out.insert(name, grad);
    }
    out
}

/// Largest relative error between two gradient maps. A parameter missing
/// from either side is treated as all zeros. The denominator is floored at
/// one so tiny gradients compare absolutely.
pub fn max_rel_err(
    analytic: &BTreeMap<String, Tensor<f64>>,
    numeric: &BTreeMap<String, Tensor<f64>>,
) -> f64 {
    let mut names: Vec<&String> = analytic.keys().collect();
    for n in numeric.keys() {
        if !analytic.contains_key(n) {
            names.push(n);
        }
    }
    let mut worst = 0.0f64;
    for name in names {
        let zero_like = |other: &Tensor<f64>| other.map(|_| 0.0);
        let (a, b) = match (analytic.get(name), numeric.get(name)) {
            (Some(a), Some(b)) => (a.clone(), b.clone()),
            (Some(a), None) => {
                let z = zero_like(a);
                (a.clone(), z)
            }
            (None, Some(b)) => {
                let z = zero_like(b);
                (z, b.clone())
            }
            (None, None) => continue,
        };
        assert_eq!(a.shape(), b.shape(), "gradient shapes for {name}");
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let rel = (x - y).abs() / (x.abs() + y.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}
