//! Forward corruption, exact posterior and the reverse parameterization.
//!
//! Everything here works on local states of one modality: ordinary states
//! `0..K'` (PAD is the last of them) and MASK at `K'`.

use rand::Rng;

use super::schedule::{DiffusionSchedule, MaskReplace};
use crate::error::{Error, Result};
use crate::quantizer::{Modality, Vocabulary};
use crate::tokens::TokenSeq;

/// Sample `z_t ~ q(z_t | z_0)` for one local state.
pub fn corrupt_state(q: &MaskReplace, z0: usize, rng: &mut impl Rng) -> usize {
    debug_assert!(z0 < q.states, "clean data never contains MASK");
    let u: f64 = rng.random();
    if u < q.gamma {
        q.states
    } else if u < q.gamma + q.alpha {
        z0
    } else {
        rng.random_range(0..q.states)
    }
}

/// Corrupt every position independently with its modality's `Q̄_t`.
pub fn corrupt(
    z0: &TokenSeq,
    t: usize,
    schedule: &DiffusionSchedule,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<TokenSeq> {
    let qs: Vec<MaskReplace> = Modality::ALL
        .iter()
        .map(|m| schedule.cumulative(t, *m))
        .collect();
    let mut out = Vec::with_capacity(z0.len());
    for (p, &tok) in z0.tokens().iter().enumerate() {
        let m = Modality::of_position(p);
        let local = vocab
            .to_local(m, tok)
            .filter(|l| *l < schedule.states(m))
            .ok_or(Error::ModalityMismatch {
                position: p,
                token: tok,
                modality: m.name(),
            })?;
        let zt = corrupt_state(&qs[m.index()], local, rng);
        out.push(vocab.to_global(m, zt));
    }
    Ok(TokenSeq(out))
}

/// Exact posterior `q(z_{t-Δ} | z_t, z_0)` over the `K'+1` local states.
///
/// With `delta = 1` this is the one-step posterior
/// `Q_t[z_t, s] Q̄_{t-1}[s, z_0] / Q̄_t[z_t, z_0]`.
pub fn posterior_span(
    schedule: &DiffusionSchedule,
    m: Modality,
    z_t: usize,
    z_0: usize,
    t: usize,
    delta: usize,
) -> Result<Vec<f64>> {
    assert!(delta >= 1 && delta <= t, "need 1 <= delta <= t");
    let fwd = schedule.span(t - delta, t, m);
    let prior = schedule.cumulative(t - delta, m);
    let evidence = schedule.cumulative(t, m).prob(z_t, z_0);
    if evidence <= 0.0 {
        return Err(Error::ZeroEvidence { z_t, z_0, t });
    }
    Ok((0..=fwd.states)
        .map(|s| fwd.prob(z_t, s) * prior.prob(s, z_0) / evidence)
        .collect())
}

pub fn posterior(
    schedule: &DiffusionSchedule,
    m: Modality,
    z_t: usize,
    z_0: usize,
    t: usize,
) -> Result<Vec<f64>> {
    posterior_span(schedule, m, z_t, z_0, t, 1)
}

/// Intermediate quantities of the reverse mixture at one position, shared by
/// the sampler and the loss gradient.
#[derive(Debug, Clone)]
pub(crate) struct ReverseTerms {
    /// `q(z_t | s)` for the Δ-step forward transition, per target state `s`.
    pub fwd_col: Vec<f64>,
    /// `1 / q(z_t | z̃_0)`, zero where the evidence vanishes.
    pub inv_evidence: Vec<f64>,
    pub prior: MaskReplace,
    /// Unnormalized reverse probabilities.
    pub unnorm: Vec<f64>,
    pub total: f64,
}

pub(crate) fn reverse_terms(
    probs0: &[f64],
    z_t: usize,
    t: usize,
    delta: usize,
    schedule: &DiffusionSchedule,
    m: Modality,
) -> ReverseTerms {
    let k = schedule.states(m);
    debug_assert_eq!(probs0.len(), k);
    assert!(delta >= 1 && delta <= t, "need 1 <= delta <= t");
    let fwd = schedule.span(t - delta, t, m);
    let prior = schedule.cumulative(t - delta, m);
    let cum = schedule.cumulative(t, m);
    let fwd_col: Vec<f64> = (0..=k).map(|s| fwd.prob(z_t, s)).collect();
    let inv_evidence: Vec<f64> = (0..k)
        .map(|z0| {
            let e = cum.prob(z_t, z0);
            if e > 0.0 {
                1.0 / e
            } else {
                0.0
            }
        })
        .collect();
    // sum_{z0} Q̄_{t-Δ}[s, z0] p̃(z0) / Q̄_t[z_t, z0], using the mask-and-replace structure.
    let ratio: Vec<f64> = probs0.iter().zip(&inv_evidence).map(|(p, i)| p * i).collect();
    let ratio_sum: f64 = ratio.iter().sum();
    let mut unnorm = Vec::with_capacity(k + 1);
    for s in 0..k {
        unnorm.push(fwd_col[s] * (prior.alpha * ratio[s] + prior.beta * ratio_sum));
    }
    unnorm.push(fwd_col[k] * prior.gamma * ratio_sum);
    let total = unnorm.iter().sum();
    ReverseTerms {
        fwd_col,
        inv_evidence,
        prior,
        unnorm,
        total,
    }
}

/// `p_θ(z_{t-Δ} | z_t) ∝ Σ_{z̃_0} q(z_{t-Δ} | z_t, z̃_0) p̃_θ(z̃_0 | z_t)`.
///
/// `probs0` is the network's normalized distribution over the `K'`
/// ordinary states. Atoms `z̃_0` with `q(z_t | z̃_0) = 0` are dropped and
/// the rest renormalized.
pub fn fast_reverse_distribution(
    probs0: &[f64],
    z_t: usize,
    t: usize,
    delta: usize,
    schedule: &DiffusionSchedule,
    m: Modality,
) -> Vec<f64> {
    let r = reverse_terms(probs0, z_t, t, delta, schedule, m);
    if r.total <= 0.0 {
        // No atom of p̃ is consistent with z_t; keep z_t.
        let mut out = vec![0.0; r.unnorm.len()];
        out[z_t] = 1.0;
        return out;
    }
    r.unnorm.iter().map(|u| u / r.total).collect()
}

pub fn reverse_distribution(
    probs0: &[f64],
    z_t: usize,
    t: usize,
    schedule: &DiffusionSchedule,
    m: Modality,
) -> Vec<f64> {
    fast_reverse_distribution(probs0, z_t, t, 1, schedule, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> DiffusionSchedule {
        DiffusionSchedule::from_steps(&[0.8, 0.8], &[0.1, 0.1], [2; 5]).unwrap()
    }

    #[test]
    fn masked_posterior_worked_case() {
        // Unnormalized (0.1 * 0.85, 0.1 * 0.05, 1 * 0.1) over (A, B, MASK).
        let p = posterior(&toy(), Modality::X, 2, 0, 2).unwrap();
        let z = 0.085 + 0.005 + 0.1;
        let expect = [0.085 / z, 0.005 / z, 0.1 / z];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p[0] - 0.4474).abs() < 1e-4);
        assert!((p[1] - 0.0263).abs() < 1e-4);
        assert!((p[2] - 0.5263).abs() < 1e-4);
    }

    #[test]
    fn unmasked_posterior_argmax() {
        let p = posterior(&toy(), Modality::X, 0, 0, 2).unwrap();
        assert!(p[0] > p[1] && p[0] > p[2]);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn zero_evidence() {
        // At t = 0 nothing is corrupted, so z_t != z_0 is impossible.
        let s = DiffusionSchedule::from_steps(&[1.0, 0.8], &[0.0, 0.1], [2; 5]).unwrap();
        assert!(matches!(
            posterior(&s, Modality::X, 1, 0, 1),
            Err(Error::ZeroEvidence { .. })
        ));
    }

    #[test]
    fn point_mass_reverse_is_posterior() {
        let s = toy();
        for zt in 0..3 {
            let rev = reverse_distribution(&[1.0, 0.0], zt, 2, &s, Modality::X);
            let post = posterior(&s, Modality::X, zt, 0, 2).unwrap();
            for (a, b) in rev.iter().zip(post) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corrupt_identity_at_t0_and_modality_closure() {
        let v = Vocabulary::uniform(3, 4);
        let sched = DiffusionSchedule::linear(
            &super::super::schedule::ScheduleConfig {
                steps: 10,
                ..Default::default()
            },
            super::super::schedule::modality_states(&v),
        )
        .unwrap();
        let layout = crate::layout::Layout::new(vec![crate::layout::Element::new(
            2,
            crate::layout::BBox::new(0.3, 0.6, 0.2, 0.4),
        )]);
        let z0 = crate::tokens::flatten(&layout, &v, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(corrupt(&z0, 0, &sched, &v, &mut rng).unwrap(), z0);
        for t in 1..=10 {
            let zt = corrupt(&z0, t, &sched, &v, &mut rng).unwrap();
            zt.check_modalities(&v).unwrap();
        }
    }
}
