//! Regression losses over a `2 × batch` (or `k × batch`) output tensor.

use super::tensor::{Scalar, Tensor};

fn check<F: Scalar>(pred: &Tensor<F>, target: &[F]) {
    assert_eq!(pred.data.len(), target.len(), "loss: prediction and target sizes differ");
}

/// Mean absolute error over every output component. The gradient of `|d|`
/// at `d = 0` is taken as 0.
pub fn mae_loss<F: Scalar>(pred: &Tensor<F>, target: &[F]) -> (f64, Tensor<F>) {
    check(pred, target);
    let m = pred.data.len().max(1) as f64;
    let scale = F::from_f64(1.0 / m);
    let mut sum = 0.0;
    let data = pred
        .data
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.abs().as_f64();
            if d > F::zero() {
                scale
            } else if d < F::zero() {
                -scale
            } else {
                F::zero()
            }
        })
        .collect();
    (sum / m, Tensor { c: pred.c, n: pred.n, h: pred.h, w: pred.w, data })
}

/// Mean squared error over every output component.
pub fn mse_loss<F: Scalar>(pred: &Tensor<F>, target: &[F]) -> (f64, Tensor<F>) {
    check(pred, target);
    let m = pred.data.len().max(1) as f64;
    let scale = F::from_f64(2.0 / m);
    let mut sum = 0.0;
    let data = pred
        .data
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            sum += (d * d).as_f64();
            d * scale
        })
        .collect();
    (sum / m, Tensor { c: pred.c, n: pred.n, h: pred.h, w: pred.w, data })
}
