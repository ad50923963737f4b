//! Hybrid training objective with an analytic gradient with respect to the
//! denoiser's logits.
//!
//! Per position the variational term is `KL(q(z_{t-1}|z_t,z_0) || p_θ(z_{t-1}|z_t))`;
//! at `t = 1` the posterior is a point mass on `z_0`, so the same expression is
//! the negative log-likelihood of `z_0`. The auxiliary term is
//! `-log p̃_θ(z_0 | z_t)` weighted by `λ`.

use super::process::{posterior, reverse_terms};
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::quantizer::{Modality, Vocabulary};
use crate::tokens::TokenSeq;

pub const DEFAULT_AUX_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PositionLoss {
    pub vb: f64,
    pub aux: f64,
    /// d(vb + λ·aux)/d(logits).
    pub grad: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss and gradient for one position.
///
/// `logits` covers the `K'` ordinary states of the modality (PAD last);
/// MASK is never a clean-data state. `z0`, `zt` are local states.
pub fn position_loss(
    logits: &[f64],
    z0: usize,
    zt: usize,
    t: usize,
    schedule: &DiffusionSchedule,
    m: Modality,
    lambda: f64,
) -> Result<PositionLoss> {
    let k = schedule.states(m);
    if logits.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for modality {m} with {k} states",
            logits.len()
        )));
    }
    let probs = softmax(logits);
    let q = posterior(schedule, m, zt, z0, t)?;
    let r = reverse_terms(&probs, zt, t, 1, schedule, m);

    let mut vb = 0.0;
    // dL/du(s) for the unnormalized reverse probabilities.
    let mut du = vec![0.0; k + 1];
    for s in 0..=k {
        if q[s] > 0.0 {
            vb += q[s] * (q[s].ln() - r.unnorm[s].ln() + r.total.ln());
            du[s] = -q[s] / r.unnorm[s] + 1.0 / r.total;
        } else {
            du[s] = 1.0 / r.total;
        }
    }
    let shared: f64 = (0..k).map(|s| du[s] * r.fwd_col[s]).sum::<f64>() * r.prior.beta
        + du[k] * r.fwd_col[k] * r.prior.gamma;
    let dprob: Vec<f64> = (0..k)
        .map(|z| (du[z] * r.fwd_col[z] * r.prior.alpha + shared) * r.inv_evidence[z])
        .collect();
    let mean: f64 = probs.iter().zip(&dprob).map(|(p, g)| p * g).sum();
    let aux = -probs[z0].ln();
    let grad = (0..k)
        .map(|j| {
            let dvb = probs[j] * (dprob[j] - mean);
            let daux = probs[j] - if j == z0 { 1.0 } else { 0.0 };
            let g = dvb + lambda * daux;
            if probs[j] == 0.0 && j != z0 {
                0.0
            } else {
                g
            }
        })
        .collect();
    Ok(PositionLoss { vb, aux, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// `vb + λ·aux`, averaged over positions.
    pub loss: f64,
    pub vb: f64,
    pub aux: f64,
    /// Gradient of `loss` per position, over that position's local states.
    pub grad: Vec<Vec<f64>>,
}

/// Position-averaged loss for one sequence.
///
/// `logits[p]` holds the scores of the `K'` ordinary states (PAD last) of
/// position `p`'s modality.
pub fn training_loss(
    logits: &[Vec<f64>],
    z0: &TokenSeq,
    zt: &TokenSeq,
    t: usize,
    schedule: &DiffusionSchedule,
    vocab: &Vocabulary,
    lambda: f64,
) -> Result<LossOutput> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("negative loss weight {lambda}")));
    }
    if logits.len() != z0.len() || z0.len() != zt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows for sequences of length {} / {}",
            logits.len(),
            z0.len(),
            zt.len()
        )));
    }
    let n = z0.len() as f64;
    let mut out = LossOutput {
        loss: 0.0,
        vb: 0.0,
        aux: 0.0,
        grad: Vec::with_capacity(logits.len()),
    };
    for (p, row) in logits.iter().enumerate() {
        let m = Modality::of_position(p);
        let local = |tok: u32| {
            vocab.to_local(m, tok).ok_or(Error::ModalityMismatch {
                position: p,
                token: tok,
                modality: m.name(),
            })
        };
        let pl = position_loss(row, local(z0.0[p])?, local(zt.0[p])?, t, schedule, m, lambda)?;
        out.vb += pl.vb / n;
        out.aux += pl.aux / n;
        out.grad.push(pl.grad.into_iter().map(|g| g / n).collect());
    }
    out.loss = out.vb + lambda * out.aux;
    if !out.loss.is_finite() {
        return Err(Error::NonfiniteLoss { batch: 0 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DiffusionSchedule {
        DiffusionSchedule::from_steps(&[0.8, 0.8], &[0.1, 0.1], [2; 5]).unwrap()
    }

    #[test]
    fn perfect_prediction_at_t1_is_zero() {
        let s = toy();
        let pl = position_loss(&[60.0, -60.0], 0, 0, 1, &s, Modality::X, 0.1).unwrap();
        assert!(pl.vb.abs() < 1e-7 && pl.aux.abs() < 1e-7);
    }

    #[test]
    fn lambda_zero_is_pure_vb() {
        let s = toy();
        let a = position_loss(&[0.3, -0.2], 1, 2, 2, &s, Modality::X, 0.0).unwrap();
        let b = position_loss(&[0.3, -0.2], 1, 2, 2, &s, Modality::X, 0.7).unwrap();
        assert_eq!(a.vb, b.vb);
        assert_ne!(a.grad, b.grad);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = toy();
        let logits = [0.4, -0.9];
        for (z0, zt, t) in [(0, 2, 2), (1, 0, 2), (0, 0, 1), (1, 2, 1)] {
            let pl = position_loss(&logits, z0, zt, t, &s, Modality::X, 0.1).unwrap();
            for j in 0..2 {
                let h = 1e-5;
                let mut up = logits;
                up[j] += h;
                let mut dn = logits;
                dn[j] -= h;
                let f = |l: &[f64]| {
                    let r = position_loss(l, z0, zt, t, &s, Modality::X, 0.1).unwrap();
                    r.vb + 0.1 * r.aux
                };
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - pl.grad[j]).abs() < 1e-7, "{fd} vs {}", pl.grad[j]);
            }
        }
    }
}
