//! Central finite differences, used as an independent check of the tape.

use crate::tensor::{Real, Tensor};

/// Central-difference gradient of `f` with respect to every element of
/// `params[i]` for each `i` in `which`.
pub fn numeric_grads(
    params: &mut [Tensor],
    which: &[usize],
    step: Real,
    mut f: impl FnMut(&[Tensor]) -> Real,
) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(which.len());
    for &i in which {
        let mut g = Tensor::zeros(params[i].shape());
        for k in 0..params[i].len() {
            let orig = params[i].data()[k];
            params[i].data_mut()[k] = orig + step;
            let plus = f(params);
            params[i].data_mut()[k] = orig - step;
            let minus = f(params);
            params[i].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)` over all elements.
///
/// Returns 0 when both are (numerically) zero.
pub fn relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> Real {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (a, b) in analytic.iter().zip(numeric) {
        for (x, y) in a.data().iter().zip(b.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let denom = na.sqrt().max(nb.sqrt());
    if denom < 1e-300 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}
