//! Dense row-major tensors and the float kernels used by the tape.
//!
//! Training runs in `f32`; gradient checks instantiate the same code with
//! `f64`, so everything numeric is generic over [`Scalar`].

use std::fmt;

/// Float element type for tensors. Implemented for `f32` and `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn maxv(self, other: Self) -> Self;
    fn minv(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: $t = 0.0;
            const ONE: $t = 1.0;
            #[inline]
            fn from_f64(x: f64) -> $t {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> $t {
                self.exp()
            }
            #[inline]
            fn ln(self) -> $t {
                self.ln()
            }
            #[inline]
            fn sqrt(self) -> $t {
                self.sqrt()
            }
            #[inline]
            fn tanh(self) -> $t {
                self.tanh()
            }
            #[inline]
            fn abs(self) -> $t {
                self.abs()
            }
            #[inline]
            fn maxv(self, other: $t) -> $t {
                self.max(other)
            }
            #[inline]
            fn minv(self, other: $t) -> $t {
                self.min(other)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense row-major tensor. Rank 1 tensors are treated as a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} does not match {} elements",
            shape,
            data.len()
        );
        assert!(shape.len() <= 2, "only rank 0..=2 tensors are supported");
        Tensor { shape, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![E::ZERO; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: E) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn row(values: Vec<E>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn from_rows(rows: &[Vec<E>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> E {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: E) {
        let cols = self.cols();
        self.data[r * cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[E] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Reinterprets the buffer under a new shape; element count must match.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len(), "reshape changes element count");
        Tensor {
            shape: vec![rows, cols],
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn item(&self) -> E {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    let mut acc = [E::ZERO; 8];
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut tail = E::ZERO;
    let rem = a.chunks_exact(8).remainder();
    let remb = b.chunks_exact(8).remainder();
    for (x, y) in rem.iter().zip(remb) {
        tail += *x * *y;
    }
    let mut total = tail;
    for v in acc {
        total += v;
    }
    total
}

#[inline]
fn axpy<E: Scalar>(alpha: E, x: &[E], out: &mut [E]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// c += a(m,k) * b(k,n)
pub(crate) fn matmul_acc<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, c: &mut Tensor<E>) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(b.rows(), k);
    debug_assert_eq!(c.rows(), m);
    debug_assert_eq!(c.cols(), n);
    let bd = b.data();
    for i in 0..m {
        let arow = a.row_slice(i);
        let crow = &mut c.data_mut()[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av != E::ZERO {
                axpy(av, &bd[l * n..(l + 1) * n], crow);
            }
        }
    }
}

pub(crate) fn matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let mut c = Tensor::zeros(a.rows(), b.cols());
    matmul_acc(a, b, &mut c);
    c
}

/// c += transpose(a)(m,k) * b(k,n), with a stored as (k,m)
pub(crate) fn matmul_at_b_acc<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, c: &mut Tensor<E>) {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(b.rows(), k);
    debug_assert_eq!(c.rows(), m);
    debug_assert_eq!(c.cols(), n);
    for l in 0..k {
        let arow = a.row_slice(l);
        let brow = &b.data()[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != E::ZERO {
                let crow = &mut c.data_mut()[i * n..(i + 1) * n];
                axpy(av, brow, crow);
            }
        }
    }
}

/// c += a(m,k) * transpose(b)(k,n), with b stored as (n,k)
pub(crate) fn matmul_a_bt_acc<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, c: &mut Tensor<E>) {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    debug_assert_eq!(b.cols(), k);
    debug_assert_eq!(c.rows(), m);
    debug_assert_eq!(c.cols(), n);
    for i in 0..m {
        let arow = a.row_slice(i);
        for j in 0..n {
            let v = dot(arow, b.row_slice(j));
            let cols = c.cols();
            c.data_mut()[i * cols + j] += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain_matmul() {
        let a = Tensor::new(vec![3, 2], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.5).collect());
        let mut c = Tensor::zeros(2, 4);
        matmul_at_b_acc(&a, &b, &mut c);
        let at = Tensor::new(vec![2, 3], vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        assert_eq!(c, matmul(&at, &b));

        let x = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = Tensor::new(vec![4, 3], (0..12).map(|i| i as f64 - 3.0).collect());
        let mut z = Tensor::zeros(2, 4);
        matmul_a_bt_acc(&x, &y, &mut z);
        let yt = Tensor::new(
            vec![3, 4],
            vec![-3.0, 0.0, 3.0, 6.0, -2.0, 1.0, 4.0, 7.0, -1.0, 2.0, 5.0, 8.0],
        );
        assert_eq!(z, matmul(&x, &yt));
    }

    #[test]
    fn dot_handles_odd_lengths() {
        let a: Vec<f64> = (0..19).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..19).map(|i| (i as f64) * 2.0).collect();
        let expect: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_eq!(dot(&a, &b), expect);
    }
}
