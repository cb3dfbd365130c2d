//! Small numeric helpers shared across modules.

use ndarray::{Array1, Array2, ArrayView1};

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Numerically stable softmax.
pub(crate) fn softmax(e: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = e.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out = e.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

/// Jacobian-transpose product of softmax: given alpha = softmax(e) and
/// d_alpha, returns d_e.
pub(crate) fn softmax_backward(alpha: ArrayView1<'_, f64>, d_alpha: ArrayView1<'_, f64>) -> Array1<f64> {
    let dot = alpha.dot(&d_alpha);
    let mut out = Array1::zeros(alpha.len());
    for ((o, &a), &da) in out.iter_mut().zip(alpha.iter()).zip(d_alpha.iter()) {
        *o = a * (da - dot);
    }
    out
}

/// out += scale * a b^T, without allocating.
pub(crate) fn outer_into(out: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let mut row = out.row_mut(i);
        for (o, &bj) in row.iter_mut().zip(b.iter()) {
            *o += ai * bj;
        }
    }
}
