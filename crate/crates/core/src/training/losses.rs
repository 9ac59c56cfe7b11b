//! The four training losses, as plain functions over tensors and as graph
//! nodes. The plain versions are direct loops and double as references for
//! the graph versions.

use daa_autograd::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{DaaError, Result};

pub const LOG_FLOOR: Real = 1e-12;
pub const DEFAULT_LAMBDA1: Real = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    D,
    G,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: Real,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: DEFAULT_LAMBDA1 }
    }
}

impl LossWeights {
    pub fn new(lambda1: Real) -> Result<Self> {
        if !(lambda1 >= 0.0) || !lambda1.is_finite() {
            return Err(DaaError::InvalidInput(format!("lambda1 must be finite and >= 0, got {lambda1}")));
        }
        Ok(Self { lambda1 })
    }
}

/// Values of the individual terms for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub adv: Real,
    pub path: Real,
    pub cons: Real,
    pub bg: Real,
}

impl LossParts {
    pub fn all_finite(&self) -> bool {
        [self.adv, self.path, self.cons, self.bg].iter().all(|v| v.is_finite())
    }
}

/// Least-squares adversarial loss, averaged over the batch. `d_real` is
/// ignored on the G side.
pub fn loss_adv(d_real: &[Real], d_fake: &[Real], side: Side) -> Real {
    let half_sq = |s: &[Real], target: Real| s.iter().map(|v| 0.5 * (v - target).powi(2)).sum::<Real>() / s.len().max(1) as Real;
    match side {
        Side::D => half_sq(d_real, 1.0) + half_sq(d_fake, 0.0),
        Side::G => half_sq(d_fake, 1.0),
    }
}

/// Cross-entropy of one probability vector against a class index.
pub fn loss_path(pred: &[Real], label: usize) -> Result<Real> {
    let p = pred
        .get(label)
        .ok_or_else(|| DaaError::InvalidInput(format!("label {label} outside {} classes", pred.len())))?;
    Ok(-p.max(LOG_FLOOR).ln())
}

fn check(a: &Tensor, b: &Tensor, m: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    let (s, t, ms) = (a.shape(), b.shape(), m.shape());
    if s != t || s.len() != 4 || ms.len() != 4 || ms[0] != s[0] || ms[1] != 1 || ms[2..] != s[2..] {
        return Err(DaaError::ShapeMismatch(format!("{what}: {s:?} vs {t:?} with mask {ms:?}")));
    }
    Ok((s[0], s[1], s[2] * s[3]))
}

fn masked_l1(a: &Tensor, b: &Tensor, m: &Tensor, what: &str) -> Result<Real> {
    let (n, c, sp) = check(a, b, m, what)?;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..sp {
            let w = 1.0 - m.data()[i * sp + j];
            let mut l1 = 0.0;
            for k in 0..c {
                let idx = (i * c + k) * sp + j;
                l1 += (a.data()[idx] - b.data()[idx]).abs();
            }
            total += w * l1;
        }
    }
    Ok(total / (n * sp) as Real)
}

/// `(1/N) sum_j (1 - phi_j) |c_hat_j - c_tilde_j|_1` over `[N, K, H, W]`
/// anatomies and a `[N, 1, H, W]` blend mask; N counts every pixel of the
/// batch.
pub fn loss_cons(c_hat: &Tensor, c_tilde: &Tensor, phi: &Tensor) -> Result<Real> {
    masked_l1(c_hat, c_tilde, phi, "consistency loss")
}

/// `(1/N) sum_j (1 - M_j) |I_a_j - I_tilde_j|` over `[N, 1, H, W]` images.
pub fn loss_bg(i_a: &Tensor, i_tilde: &Tensor, mask: &Tensor) -> Result<Real> {
    masked_l1(i_a, i_tilde, mask, "background loss")
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Real {
    parts.adv + parts.path + weights.lambda1 * (parts.cons + parts.bg)
}

// graph versions

/// `½ mean((s - target)²)`.
pub fn lsgan_var(g: &Graph, scores: Var, target: Real) -> Var {
    g.scale(g.mean(g.square(g.add_scalar(scores, -target))), 0.5)
}

pub fn adv_d_var(g: &Graph, d_real: Var, d_fake: Var) -> Var {
    g.add(lsgan_var(g, d_real, 1.0), lsgan_var(g, d_fake, 0.0))
}

pub fn adv_g_var(g: &Graph, d_fake: Var) -> Var {
    lsgan_var(g, d_fake, 1.0)
}

/// Mean cross-entropy of `logits[N, Ω]` against labels.
pub fn path_var(g: &Graph, logits: Var, labels: &[usize]) -> Var {
    let shape = g.shape(logits);
    let (n, c) = (shape[0], shape[1]);
    let mut onehot = Tensor::zeros(&[n, c]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.data_mut()[i * c + l] = 1.0;
    }
    let logp = g.log_clamped(g.softmax_channels(logits), LOG_FLOOR);
    g.scale(g.sum(g.mul(logp, g.constant(onehot))), -1.0 / n as Real)
}

/// Graph form of [`loss_cons`] / [`loss_bg`]; `mask` is a constant.
pub fn masked_l1_var(g: &Graph, a: Var, b: Var, mask: &Tensor) -> Var {
    let s = g.shape(a);
    let keep = g.constant(mask.map(|m| 1.0 - m));
    let per = g.mul_spatial(g.abs(g.sub(a, b)), keep);
    g.scale(g.sum(per), 1.0 / (s[0] * s[2] * s[3]) as Real)
}

/// `adv + path + λ1 (cons + bg)` as a graph node.
pub fn total_var(g: &Graph, adv: Var, path: Var, cons: Var, bg: Var, weights: &LossWeights) -> Var {
    g.add(g.add(adv, path), g.scale(g.add(cons, bg), weights.lambda1))
}
