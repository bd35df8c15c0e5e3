//! Scalar abstraction and the batch tensor type.

use std::fmt::Debug;

use num_traits::Float;

/// Floating-point element type of a network (`f32` or `f64`).
pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    /// `c = alpha·a·b + beta·c` for an `m×k` by `k×n` product with explicit
    /// row/column strides.
    ///
    /// # Safety
    /// The strided views must lie inside the pointed-to buffers and `c` must
    /// not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major matrix view or its transpose over a flat buffer.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    /// Read the buffer as the transpose of a `cols × rows` row-major matrix.
    pub transposed: bool,
}

impl<'a, F: Scalar> Mat<'a, F> {
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, transposed: false }
    }

    /// `cols × rows` transpose of a row-major `rows × cols` buffer.
    pub fn t(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self { data, rows: cols, cols: rows, transposed: true }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a·b + beta·out` where `out` is row-major `a.rows × b.cols`.
pub(crate) fn gemm<F: Scalar>(a: Mat<'_, F>, b: Mat<'_, F>, beta: F, out: &mut [F]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert_eq!(out.len(), a.rows * b.cols, "gemm output size");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes and buffer lengths are checked above; `out` is a unique
    // borrow so it cannot alias the inputs.
    unsafe {
        F::gemm_raw(
            a.rows, a.cols, b.cols, F::one(),
            a.data.as_ptr(), rsa, csa,
            b.data.as_ptr(), rsb, csb,
            beta, out.as_mut_ptr(), b.cols as isize, 1,
        );
    }
}

/// Batch of feature maps stored channel-major: `data[((c·n + i)·h + y)·w + x]`.
///
/// A single sample (`n = 1`) is an ordinary `c × h × w` row-major tensor.
/// Dense layers use `h = w = 1`, so a batch of vectors is a
/// `features × batch` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![F::zero(); c * n * h * w] }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<F>) -> crate::Result<Self> {
        if data.len() != c * n * h * w {
            return Err(crate::Error::Validation(format!(
                "tensor data has {} values, shape {c}x{n}x{h}x{w} needs {}",
                data.len(),
                c * n * h * w
            )));
        }
        Ok(Self { c, n, h, w, data })
    }

    /// Batch of feature vectors laid out as `features × batch`.
    pub fn vectors(features: usize, batch: usize, data: Vec<F>) -> crate::Result<Self> {
        Self::from_vec(features, batch, 1, 1, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c, self.n, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn at(&self, c: usize, i: usize, y: usize, x: usize) -> F {
        self.data[((c * self.n + i) * self.h + y) * self.w + x]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            c: self.c,
            n: self.n,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }
}
