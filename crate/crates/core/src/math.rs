//! Dense `f64` linear algebra and activation primitives.
//!
//! Weight matrices carry their bias as an extra trailing column, so a layer
//! with `n` inputs and `m` outputs is stored as an `m x (n + 1)` matrix.
//! [`affine`], [`backproject`] and [`outer_accum`] take care of the
//! augmentation; callers never build `[a; 1]` vectors themselves.
//!
//! Every call to one of those three products bumps a thread-local counter
//! that the compute-accounting diagnostics compare against closed forms.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, PcError, Result};

thread_local! {
    static MATMULS: Cell<u64> = const { Cell::new(0) };
}

/// Number of weight-matrix products performed on this thread since the last
/// [`reset_matmul_counter`].
pub fn matmuls_performed() -> u64 {
    MATMULS.with(Cell::get)
}

pub fn reset_matmul_counter() {
    MATMULS.with(|c| c.set(0));
}

fn bump_matmuls() {
    MATMULS.with(|c| c.set(c.get() + 1));
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A mini-batch of activity vectors, one row per sample.
pub type Batch = Mat;

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list().entries((0..self.rows).map(|i| self.row(i))).finish()
        } else {
            write!(f, "[..]")
        }
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return shape_err(
                "Mat::from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            );
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_rows(&[values])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &Mat) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Mat) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn hadamard(&self, other: &Mat) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Mat) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean_abs(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }

    pub fn mean_sq(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum_sq() / self.data.len() as f64
    }

    /// Squared Euclidean norm of each row.
    pub fn row_sum_sq(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v * v).sum())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_same_shape(&self, other: &Mat, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(
                op,
                format!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols),
            );
        }
        Ok(())
    }
}

/// Strided `c = alpha * a * b + beta * c` over raw slices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover the strided m x k, k x n
    // and m x n views; the output does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `out[i] = W * [a[i]; 1]` for every sample row `i`.
pub fn affine(w: &Mat, a: &Batch) -> Result<Batch> {
    let n = a.cols;
    if w.cols != n + 1 {
        return shape_err(
            "affine",
            format!("weights {}x{} cannot act on inputs of width {n}", w.rows, w.cols),
        );
    }
    let m = w.rows;
    let s = a.rows;
    let mut out = Mat::zeros(s, m);
    for i in 0..s {
        let row = out.row_mut(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = w.data[j * w.cols + n];
        }
    }
    gemm(
        s,
        n,
        m,
        &a.data,
        (n, 1),
        &w.data,
        (1, n + 1),
        1.0,
        &mut out.data,
        (m, 1),
    );
    bump_matmuls();
    Ok(out)
}

/// `out[i] = W[:, :n]^T d[i]`, the bias column dropped.
pub fn backproject(w: &Mat, d: &Batch) -> Result<Batch> {
    let m = w.rows;
    if d.cols != m || w.cols == 0 {
        return shape_err(
            "backproject",
            format!("weights {}x{} cannot take signals of width {}", w.rows, w.cols, d.cols),
        );
    }
    let n = w.cols - 1;
    let s = d.rows;
    let mut out = Mat::zeros(s, n);
    gemm(
        s,
        m,
        n,
        &d.data,
        (m, 1),
        &w.data,
        (n + 1, 1),
        0.0,
        &mut out.data,
        (n, 1),
    );
    bump_matmuls();
    Ok(out)
}

/// `sum_i e[i] ⊗ [a[i]; 1]`, an `m x (n + 1)` matrix.
pub fn outer_accum(e: &Batch, a: &Batch) -> Result<Mat> {
    if e.rows != a.rows {
        return shape_err(
            "outer_accum",
            format!("{} error rows vs {} activity rows", e.rows, a.rows),
        );
    }
    let (s, m, n) = (e.rows, e.cols, a.cols);
    let mut out = Mat::zeros(m, n + 1);
    gemm(
        m,
        s,
        n,
        &e.data,
        (1, m),
        &a.data,
        (n, 1),
        0.0,
        &mut out.data,
        (n + 1, 1),
    );
    for i in 0..s {
        for (j, &ej) in e.row(i).iter().enumerate() {
            out.data[j * (n + 1) + n] += ej;
        }
    }
    bump_matmuls();
    Ok(out)
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative; `relu'(0) = 0`.
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

pub fn apply_act(kind: Activation, x: &Batch) -> Batch {
    x.map(|v| kind.apply(v))
}

pub fn apply_act_deriv(kind: Activation, x: &Batch) -> Batch {
    x.map(|v| kind.deriv(v))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max-shift.
pub fn softmax(x: &Batch) -> Batch {
    let mut out = x.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Nonlinearity applied to the linear output prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputNl {
    Softmax,
    Sigmoid,
    Identity,
}

impl OutputNl {
    pub fn apply(self, x: &Batch) -> Batch {
        match self {
            OutputNl::Softmax => softmax(x),
            OutputNl::Sigmoid => x.map(sigmoid),
            OutputNl::Identity => x.clone(),
        }
    }

    /// Row-wise `J(x)^T v`, where `J` is the Jacobian of the nonlinearity at
    /// the linear input `x`.
    pub fn vjp(self, x: &Batch, v: &Batch) -> Result<Batch> {
        x.check_same_shape(v, "OutputNl::vjp")?;
        match self {
            OutputNl::Identity => Ok(v.clone()),
            OutputNl::Sigmoid => x.zip_map(v, |xi, vi| {
                let s = sigmoid(xi);
                s * (1.0 - s) * vi
            }),
            OutputNl::Softmax => {
                let s = softmax(x);
                let mut out = Mat::zeros(x.rows, x.cols);
                for i in 0..x.rows {
                    let (si, vi) = (s.row(i), v.row(i));
                    let dot: f64 = si.iter().zip(vi).map(|(a, b)| a * b).sum();
                    for (o, (a, b)) in out.row_mut(i).iter_mut().zip(si.iter().zip(vi)) {
                        *o = a * (b - dot);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Mean over samples of `½‖y − p‖²`.
pub fn mse(y: &Batch, p: &Batch) -> Result<f64> {
    y.check_same_shape(p, "mse")?;
    if y.rows == 0 {
        return Ok(0.0);
    }
    let total: f64 = y.data.iter().zip(&p.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * total / y.rows as f64)
}

macro_rules! parse_enum {
    ($ty:ty, $what:literal, { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = PcError;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(PcError::InvalidConfig(format!(
                        concat!("unknown ", $what, " '{}'"), other
                    ))),
                }
            }
        }
    };
}

parse_enum!(Activation, "activation", {
    "relu" => Activation::Relu,
    "tanh" => Activation::Tanh,
    "identity" => Activation::Identity,
    "linear" => Activation::Identity,
    "sigmoid" => Activation::Sigmoid,
});

parse_enum!(OutputNl, "output nonlinearity", {
    "softmax" => OutputNl::Softmax,
    "sigmoid" => OutputNl::Sigmoid,
    "identity" => OutputNl::Identity,
    "linear" => OutputNl::Identity,
});

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl fmt::Display for OutputNl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputNl::Softmax => "softmax",
            OutputNl::Sigmoid => "sigmoid",
            OutputNl::Identity => "identity",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_examples() {
        let w = Mat::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let a = Mat::row_vector(&[2.0, 3.0]);
        assert_eq!(affine(&w, &a).unwrap(), Mat::row_vector(&[2.0, 3.0]));

        let w = Mat::from_rows(&[[0.0, 0.0, 5.0]]);
        assert_eq!(
            affine(&w, &Mat::row_vector(&[7.0, 9.0])).unwrap(),
            Mat::row_vector(&[5.0])
        );

        // 1*2 + 1*3 + 1
        let w = Mat::from_rows(&[[1.0, 1.0, 1.0]]);
        assert_eq!(affine(&w, &a).unwrap(), Mat::row_vector(&[6.0]));
    }

    #[test]
    fn affine_rejects_bad_shape() {
        let w = Mat::zeros(2, 2);
        let a = Mat::row_vector(&[1.0, 2.0]);
        assert!(matches!(affine(&w, &a), Err(PcError::Shape { .. })));
    }

    #[test]
    fn backproject_drops_bias() {
        let w = Mat::from_rows(&[[1.0, 2.0, 100.0], [3.0, 4.0, 100.0]]);
        let d = Mat::row_vector(&[1.0, -1.0]);
        assert_eq!(backproject(&w, &d).unwrap(), Mat::row_vector(&[-2.0, -2.0]));
    }

    #[test]
    fn activation_examples() {
        let x = Mat::row_vector(&[-1.0, 2.0]);
        assert_eq!(apply_act(Activation::Relu, &x), Mat::row_vector(&[0.0, 2.0]));
        assert_eq!(apply_act_deriv(Activation::Relu, &x), Mat::row_vector(&[0.0, 1.0]));
        assert_eq!(Activation::Relu.deriv(0.0), 0.0);
        assert_eq!(
            apply_act_deriv(Activation::Identity, &Mat::row_vector(&[-3.0, 0.0, 8.0])),
            Mat::row_vector(&[1.0, 1.0, 1.0])
        );
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Sigmoid.deriv(0.0), 0.25);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&Mat::row_vector(&[0.0, 0.0])), Mat::row_vector(&[0.5, 0.5]));
        let big = softmax(&Mat::row_vector(&[1000.0, 0.0]));
        assert!(big.is_finite());
        assert_eq!(big.get(0, 0), 1.0);
        assert!(big.get(0, 1) < 1e-300);
    }

    #[test]
    fn mse_examples() {
        let y = Mat::row_vector(&[1.0, 0.0]);
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert_eq!(mse(&y, &Mat::row_vector(&[0.0, 0.0])).unwrap(), 0.5);
        let y = Mat::row_vector(&[2.0, 2.0]);
        assert_eq!(mse(&y, &Mat::row_vector(&[0.0, 1.0])).unwrap(), 2.5);
        assert!(mse(&y, &Mat::row_vector(&[0.0])).is_err());
    }

    #[test]
    fn outer_accum_examples() {
        let e = Mat::row_vector(&[1.0, 0.0]);
        let a = Mat::row_vector(&[2.0, 3.0]);
        assert_eq!(
            outer_accum(&e, &a).unwrap(),
            Mat::from_rows(&[[2.0, 3.0, 1.0], [0.0, 0.0, 0.0]])
        );
        assert_eq!(outer_accum(&Mat::zeros(1, 2), &a).unwrap(), Mat::zeros(2, 3));
        // [1]⊗[1,1] + [1]⊗[2,1]
        let e = Mat::from_rows(&[[1.0], [1.0]]);
        let a = Mat::from_rows(&[[1.0], [2.0]]);
        assert_eq!(outer_accum(&e, &a).unwrap(), Mat::from_rows(&[[3.0, 2.0]]));
        assert!(outer_accum(&Mat::zeros(2, 1), &Mat::zeros(3, 1)).is_err());
    }

    #[test]
    fn products_are_counted() {
        reset_matmul_counter();
        let w = Mat::zeros(2, 3);
        let a = Mat::zeros(4, 2);
        affine(&w, &a).unwrap();
        backproject(&w, &Mat::zeros(4, 2)).unwrap();
        outer_accum(&Mat::zeros(4, 2), &a).unwrap();
        assert_eq!(matmuls_performed(), 3);
    }

    #[test]
    fn softmax_vjp_matches_dense_jacobian() {
        let x = Mat::row_vector(&[0.3, -1.2, 2.0]);
        let v = Mat::row_vector(&[1.0, 0.5, -0.25]);
        let s = softmax(&x);
        let mut expected = [0.0; 3];
        for (j, e) in expected.iter_mut().enumerate() {
            for i in 0..3 {
                let jac = if i == j {
                    s.get(0, i) * (1.0 - s.get(0, i))
                } else {
                    -s.get(0, i) * s.get(0, j)
                };
                *e += jac * v.get(0, i);
            }
        }
        let got = OutputNl::Softmax.vjp(&x, &v).unwrap();
        for (g, e) in got.data().iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    fn small_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, n)
    }

    proptest! {
        #[test]
        fn affine_is_linear_without_bias(
            w in small_vec(12), a in small_vec(3), b in small_vec(3),
            alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
        ) {
            let mut w = Mat::from_vec(3, 4, w).unwrap();
            for r in 0..3 { w.set(r, 3, 0.0); }
            let a = Mat::row_vector(&a);
            let b = Mat::row_vector(&b);
            let mut combo = a.scale(alpha);
            combo.axpy(beta, &b).unwrap();
            let lhs = affine(&w, &combo).unwrap();
            let mut rhs = affine(&w, &a).unwrap().scale(alpha);
            rhs.axpy(beta, &affine(&w, &b).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }

        #[test]
        fn softmax_rows_normalize_and_shift(x in small_vec(5), c in -50.0f64..50.0) {
            let x = Mat::row_vector(&x);
            let s = softmax(&x);
            prop_assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted = softmax(&x.map(|v| v + c));
            prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-12);
        }

        #[test]
        fn derivatives_match_central_differences(x in -4.0f64..4.0) {
            let h = 1e-6;
            for kind in [Activation::Relu, Activation::Tanh, Activation::Identity, Activation::Sigmoid] {
                if kind == Activation::Relu && x.abs() < 1e-3 { continue; }
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                let an = kind.deriv(x);
                let rel = (fd - an).abs() / an.abs().max(1e-8);
                prop_assert!(rel < 1e-6 || (fd - an).abs() < 1e-9, "{kind}: fd {fd} vs {an}");
            }
        }
    }
}
