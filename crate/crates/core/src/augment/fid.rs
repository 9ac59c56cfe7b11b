//! Fréchet distance between feature sets, with the classifier's
//! penultimate layer standing in for an Inception embedding.

use daa_autograd::{Real, Tensor};
use nalgebra::{DMatrix, DVector};

use crate::error::{DaaError, Result};
use crate::nets::Classifier;

pub const COV_EPS: Real = 1e-6;

fn stats(x: &[Vec<Real>]) -> Result<(DVector<Real>, DMatrix<Real>)> {
    if x.len() < 2 {
        return Err(DaaError::InvalidInput(format!("need at least 2 feature vectors, got {}", x.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|v| v.len() != d) {
        return Err(DaaError::ShapeMismatch("feature vectors differ in length".into()));
    }
    let n = x.len();
    let m = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let mu = m.row_mean().transpose();
    let centred = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mu[j]);
    let cov = centred.transpose() * &centred / (n - 1) as Real + DMatrix::identity(d, d) * COV_EPS;
    Ok((mu, cov))
}

fn sym_sqrt(a: &DMatrix<Real>) -> DMatrix<Real> {
    let e = a.clone().symmetric_eigen();
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^½)` with `ε I` added to both
/// covariances.
pub fn frechet_distance(a: &[Vec<Real>], b: &[Vec<Real>]) -> Result<Real> {
    let (ma, ca) = stats(a)?;
    let (mb, cb) = stats(b)?;
    if ma.len() != mb.len() {
        return Err(DaaError::ShapeMismatch(format!("feature sizes {} and {}", ma.len(), mb.len())));
    }
    // tr (Σa Σb)^½ = tr (Σa^½ Σb Σa^½)^½, the inner matrix being symmetric
    let ra = sym_sqrt(&ca);
    let mut inner = &ra * &cb * &ra;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: Real = inner.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Fréchet distance over `embedder` features of two image sets.
pub fn proxy_fid(real: &[Tensor], generated: &[Tensor], embedder: &Classifier) -> Result<Real> {
    let embed = |xs: &[Tensor]| -> Result<Vec<Vec<Real>>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(32) {
            out.extend(embedder.embed(&Tensor::stack(chunk))?);
        }
        Ok(out)
    };
    frechet_distance(&embed(real)?, &embed(generated)?)
}
