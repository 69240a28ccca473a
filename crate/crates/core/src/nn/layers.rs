//! Network building blocks: linear layers, MLPs, a GRU cell, and
//! straight-through categorical sampling with uniform mixing.

use rand::Rng;

use super::store::{Ctx, ParamStore};
use super::tape::Var;
use super::tensor::{Scalar, Tensor};
use crate::util::Prng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Linear,
    Silu,
    Tanh,
    Sigmoid,
}

pub fn apply_act<E: Scalar>(cx: &mut Ctx<E>, x: Var, act: Act) -> Var {
    match act {
        Act::Linear => x,
        Act::Silu => cx.tape.silu(x),
        Act::Tanh => cx.tape.tanh(x),
        Act::Sigmoid => cx.tape.sigmoid(x),
    }
}

/// x @ W + b with parameters `{name}.w` and `{name}.b`.
pub fn linear<E: Scalar>(cx: &mut Ctx<E>, x: Var, name: &str) -> Var {
    let w = cx.p(&format!("{name}.w"));
    let b = cx.p(&format!("{name}.b"));
    let xw = cx.tape.matmul(x, w);
    cx.tape.add_row(xw, b)
}

/// MLP description: sizes plus the hidden-layer recipe. Hidden layers are
/// linear -> layer norm -> activation; the final layer is plain linear and
/// is zero-initialized when `zero_final` is set so fresh heads start flat
/// (uniform policies, zero values).
#[derive(Clone, Debug)]
pub struct MlpDef {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub hidden_act: Act,
    pub layer_norm: bool,
    pub zero_final: bool,
}

impl MlpDef {
    pub fn new(prefix: impl Into<String>, dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        MlpDef {
            prefix: prefix.into(),
            dims,
            hidden_act: Act::Silu,
            layer_norm: true,
            zero_final: true,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn init<E: Scalar>(&self, store: &mut ParamStore<E>, rng: &mut Prng) {
        for i in 0..self.dims.len() - 1 {
            let (din, dout) = (self.dims[i], self.dims[i + 1]);
            let last = i == self.dims.len() - 2;
            let base = format!("{}.l{i}", self.prefix);
            if last && self.zero_final {
                store.init_zeros(format!("{base}.w"), din, dout);
            } else {
                store.init_normal(format!("{base}.w"), din, dout, rng);
            }
            store.init_zeros(format!("{base}.b"), 1, dout);
            if !last && self.layer_norm {
                store.init_full(format!("{base}.ln_g"), 1, dout, 1.0);
                store.init_zeros(format!("{base}.ln_b"), 1, dout);
            }
        }
    }

    pub fn apply<E: Scalar>(&self, cx: &mut Ctx<E>, x: Var) -> Var {
        assert_eq!(
            cx.value(x).cols(),
            self.in_dim(),
            "{} input width",
            self.prefix
        );
        let mut h = x;
        for i in 0..self.dims.len() - 1 {
            let last = i == self.dims.len() - 2;
            let base = format!("{}.l{i}", self.prefix);
            h = linear(cx, h, &base);
            if !last {
                if self.layer_norm {
                    let g = cx.p(&format!("{base}.ln_g"));
                    let b = cx.p(&format!("{base}.ln_b"));
                    h = cx.tape.layer_norm(h, g, b);
                }
                h = apply_act(cx, h, self.hidden_act);
            }
        }
        h
    }
}

pub fn gru_init<E: Scalar>(
    store: &mut ParamStore<E>,
    prefix: &str,
    in_dim: usize,
    h_dim: usize,
    rng: &mut Prng,
) {
    store.init_normal(format!("{prefix}.wx"), in_dim, 3 * h_dim, rng);
    store.init_normal(format!("{prefix}.wh"), h_dim, 3 * h_dim, rng);
    store.init_zeros(format!("{prefix}.b"), 1, 3 * h_dim);
}

/// GRU cell with gate order reset, update, candidate:
///   r = sigmoid(xr + hr), z = sigmoid(xz + hz), n = tanh(xn + r*hn)
///   h' = z*h + (1-z)*n
/// All-zero parameters and inputs yield an all-zero next state.
pub fn gru_step<E: Scalar>(cx: &mut Ctx<E>, prefix: &str, x: Var, h: Var) -> Var {
    let wx = cx.p(&format!("{prefix}.wx"));
    let wh = cx.p(&format!("{prefix}.wh"));
    let b = cx.p(&format!("{prefix}.b"));
    let h_dim = cx.value(h).cols();
    assert_eq!(cx.value(wh).rows(), h_dim, "gru hidden width");
    assert_eq!(cx.value(wx).rows(), cx.value(x).cols(), "gru input width");

    let xw0 = cx.tape.matmul(x, wx);
    let xw = cx.tape.add_row(xw0, b);
    let hu = cx.tape.matmul(h, wh);

    let xr = cx.tape.slice_cols(xw, 0, h_dim);
    let xz = cx.tape.slice_cols(xw, h_dim, h_dim);
    let xn = cx.tape.slice_cols(xw, 2 * h_dim, h_dim);
    let hr = cx.tape.slice_cols(hu, 0, h_dim);
    let hz = cx.tape.slice_cols(hu, h_dim, h_dim);
    let hn = cx.tape.slice_cols(hu, 2 * h_dim, h_dim);

    let r_in = cx.tape.add(xr, hr);
    let r = cx.tape.sigmoid(r_in);
    let z_in = cx.tape.add(xz, hz);
    let z = cx.tape.sigmoid(z_in);
    let gated = cx.tape.mul(r, hn);
    let n_in = cx.tape.add(xn, gated);
    let n = cx.tape.tanh(n_in);

    let zh = cx.tape.mul(z, h);
    let neg_z = cx.tape.scale(z, -E::ONE);
    let one_minus_z = cx.tape.add_const(neg_z, E::ONE);
    let zn = cx.tape.mul(one_minus_z, n);
    cx.tape.add(zh, zn)
}

/// Softmax over each group's classes followed by uniform mixing:
/// p = (1-unimix) * softmax(logits) + unimix / classes.
/// Input is (batch, groups*classes); output is (batch*groups, classes).
pub fn categorical_probs<E: Scalar>(
    cx: &mut Ctx<E>,
    logits: Var,
    groups: usize,
    classes: usize,
    unimix: f64,
) -> Var {
    let rows = cx.value(logits).rows();
    assert_eq!(cx.value(logits).cols(), groups * classes, "latent width");
    let grouped = cx.tape.reshape(logits, rows * groups, classes);
    let sm = cx.tape.softmax_rows(grouped);
    if unimix == 0.0 {
        return sm;
    }
    let scaled = cx.tape.scale(sm, E::from_f64(1.0 - unimix));
    cx.tape.add_const(scaled, E::from_f64(unimix / classes as f64))
}

/// Draws a one-hot sample per row of a probability tensor.
pub fn sample_rows_one_hot<E: Scalar>(probs: &Tensor<E>, rng: &mut Prng) -> Tensor<E> {
    let (rows, cols) = (probs.rows(), probs.cols());
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let u: f64 = rng.gen();
        let idx = pick_from_row(probs.row_slice(r), u);
        out.set(r, idx, E::ONE);
    }
    out
}

/// One-hot of each row's most probable class (first index on ties).
pub fn mode_rows_one_hot<E: Scalar>(probs: &Tensor<E>) -> Tensor<E> {
    let (rows, cols) = (probs.rows(), probs.cols());
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let row = probs.row_slice(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        out.set(r, best, E::ONE);
    }
    out
}

pub fn pick_from_row<E: Scalar>(row: &[E], u: f64) -> usize {
    let mut cum = 0.0f64;
    for (i, &p) in row.iter().enumerate() {
        cum += p.to_f64();
        if u < cum {
            return i;
        }
    }
    row.len() - 1
}

/// How latent samples are drawn from categorical posteriors/priors.
pub enum Draw<'r> {
    /// Sample from the distribution using the given generator.
    Sample(&'r mut Prng),
    /// Deterministic mode: the most probable class per group.
    Mode,
}

/// Categorical latent head: softmax + unimix, then a one-hot draw wired with
/// the straight-through estimator so gradients flow to the logits.
/// Returns the one-hot sample shaped (batch, groups*classes) and the mixed
/// probabilities shaped (batch*groups, classes).
pub fn categorical_straight_through<E: Scalar>(
    cx: &mut Ctx<E>,
    logits: Var,
    groups: usize,
    classes: usize,
    unimix: f64,
    draw: Draw,
) -> (Var, Var) {
    let rows = cx.value(logits).rows();
    let probs = categorical_probs(cx, logits, groups, classes, unimix);
    let sample = match draw {
        Draw::Sample(rng) => sample_rows_one_hot(cx.value(probs), rng),
        Draw::Mode => mode_rows_one_hot(cx.value(probs)),
    };
    let st = cx.tape.straight_through(probs, sample);
    let z = cx.tape.reshape(st, rows, groups * classes);
    (z, probs)
}

pub fn one_hot<E: Scalar>(len: usize, idx: usize) -> Tensor<E> {
    assert!(idx < len, "one_hot index {idx} out of {len}");
    let mut t = Tensor::zeros(1, len);
    t.set(0, idx, E::ONE);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_gru_maps_zero_to_zero() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.init_zeros("gru.wx", 4, 9);
        store.init_zeros("gru.wh", 3, 9);
        store.init_zeros("gru.b", 1, 9);
        let mut cx = Ctx::new(&store);
        let x = cx.constant(Tensor::zeros(2, 4));
        let h = cx.constant(Tensor::zeros(2, 3));
        let h2 = gru_step(&mut cx, "gru", x, h);
        assert!(cx.value(h2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_final_mlp_outputs_zeros() {
        let mut rng = Prng::seed_from_u64(1);
        let def = MlpDef::new("head", vec![5, 8, 3]);
        let mut store: ParamStore<f64> = ParamStore::new();
        def.init(&mut store, &mut rng);
        let mut cx = Ctx::new(&store);
        let x = cx.constant(Tensor::row(vec![0.3, -1.0, 2.0, 0.0, 0.7]));
        let y = def.apply(&mut cx, x);
        assert!(cx.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unimix_bounds_probabilities_away_from_zero() {
        let store: ParamStore<f64> = ParamStore::new();
        let mut cx = Ctx::new(&store);
        let logits = cx.constant(Tensor::row(vec![100.0, 0.0, 0.0, 0.0]));
        let probs = categorical_probs(&mut cx, logits, 1, 4, 0.01);
        let p = cx.value(probs);
        let floor = 0.01 / 4.0;
        for &v in p.data() {
            assert!(v >= floor - 1e-12, "prob {v} under floor");
        }
        let total: f64 = p.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mode_draw_is_deterministic_and_one_hot_per_group() {
        let store: ParamStore<f64> = ParamStore::new();
        let mut cx = Ctx::new(&store);
        let logits = cx.constant(Tensor::new(
            vec![1, 6],
            vec![0.1, 2.0, -1.0, 0.0, 0.0, 3.0],
        ));
        let (z, _) = categorical_straight_through(&mut cx, logits, 2, 3, 0.01, Draw::Mode);
        assert_eq!(cx.value(z).data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn sampling_tracks_probabilities() {
        let mut rng = Prng::seed_from_u64(11);
        let probs = Tensor::row(vec![0.7, 0.2, 0.1]);
        let mut counts = [0usize; 3];
        for _ in 0..5000 {
            let s = sample_rows_one_hot(&probs, &mut rng);
            let idx = s.data().iter().position(|&v| v == 1.0).unwrap();
            counts[idx] += 1;
        }
        assert!((counts[0] as f64 / 5000.0 - 0.7).abs() < 0.03);
        assert!((counts[2] as f64 / 5000.0 - 0.1).abs() < 0.02);
    }
}
