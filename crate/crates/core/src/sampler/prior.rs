//! Weak constraints as additive priors in log-probability space.
//!
//! Distributions here are over the `K'+1` local states of one position
//! (ordinary states, PAD, then MASK).

use serde::{Deserialize, Serialize};

use super::relation::{relation_loss, RelationConstraint};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::quantizer::{Modality, Vocabulary};
use crate::tokens::ATTRIBUTES;

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_REFINE_LAMBDA: f64 = 3.0;
pub const DEFAULT_RELATION_LAMBDA: f64 = 3.0;
pub const DEFAULT_REPEATS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    RefineDefault,
    RefineGaussian,
    RefineNegation,
    LossGuided,
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" | "refine_default" => Ok(PriorKind::RefineDefault),
            "gaussian" | "refine_gaussian" => Ok(PriorKind::RefineGaussian),
            "negation" | "refine_negation" => Ok(PriorKind::RefineNegation),
            "loss_guided" => Ok(PriorKind::LossGuided),
            other => Err(Error::InvalidArgument(format!("unknown prior kind {other:?}"))),
        }
    }
}

/// One weak constraint attached to a task condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub lambda: f64,
    /// Window half-width for the refinement kinds.
    pub margin: f64,
    /// Adjustment passes per diffusion step for the loss-guided kind.
    pub repeats: usize,
    /// Clamped noisy observation for the refinement kinds, in slot order.
    pub noisy: Option<Layout>,
    pub relations: Vec<RelationConstraint>,
}

impl PriorSpec {
    pub fn refine(kind: PriorKind, noisy: Layout, lambda: f64, margin: f64) -> Self {
        PriorSpec {
            kind,
            lambda,
            margin,
            repeats: 1,
            noisy: Some(noisy),
            relations: Vec::new(),
        }
    }

    pub fn guided(relations: Vec<RelationConstraint>, lambda: f64, repeats: usize) -> Self {
        PriorSpec {
            kind: PriorKind::LossGuided,
            lambda,
            margin: DEFAULT_MARGIN,
            repeats,
            noisy: None,
            relations,
        }
    }

    pub fn validate(&self, elements: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCondition(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("prior weight {} must be finite and >= 0", self.lambda));
        }
        match self.kind {
            PriorKind::LossGuided => {
                if self.repeats == 0 {
                    return bad("repeats must be >= 1".into());
                }
                for r in &self.relations {
                    r.validate(elements)?;
                }
            }
            _ => {
                if !(self.margin > 0.0 && self.margin < 1.0) {
                    return bad(format!("margin {} not in (0,1)", self.margin));
                }
                if self.noisy.is_none() {
                    return bad("refinement prior without a noisy layout".into());
                }
            }
        }
        Ok(())
    }
}

/// `softmax(log p + λ π)`; entries with `π = -inf` or `p = 0` get exactly 0.
/// `λ = 0` returns the input unchanged.
pub fn adjust_logits(probs: &[f64], pi: &[f64], lambda: f64, position: usize) -> Result<Vec<f64>> {
    if probs.len() != pi.len() {
        return Err(Error::ShapeMismatch(format!(
            "prior of length {} for a distribution of length {}",
            pi.len(),
            probs.len()
        )));
    }
    if lambda == 0.0 {
        return Ok(probs.to_vec());
    }
    let scores: Vec<f64> = probs
        .iter()
        .zip(pi)
        .map(|(&p, &q)| {
            if p <= 0.0 || q == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                p.ln() + lambda * q
            }
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMassesZero { position });
    }
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() })
        .collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorWarning {
    /// No centroid within the margin; the nearest centroid was admitted.
    EmptyWindow { element: usize, modality: &'static str, value: f64 },
}

impl std::fmt::Display for PriorWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorWarning::EmptyWindow {
                element,
                modality,
                value,
            } => write!(
                f,
                "no {modality} centroid within margin of {value} for element {element}; using the nearest"
            ),
        }
    }
}

/// Per-position prior over local states; `None` means no prior.
pub type PriorTable = Vec<Option<Vec<f64>>>;

/// Window prior around the (clamped) noisy geometry of each element.
/// Category positions carry no prior.
pub fn refine_prior(
    noisy: &Layout,
    vocab: &Vocabulary,
    kind: PriorKind,
    margin: f64,
    max_elements: usize,
) -> Result<(PriorTable, Vec<PriorWarning>)> {
    if kind == PriorKind::LossGuided {
        return Err(Error::InvalidCondition("loss-guided prior has no static table".into()));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::InvalidCondition(format!("margin {margin} not in (0,1)")));
    }
    if noisy.len() > max_elements {
        return Err(Error::TooManyElements {
            count: noisy.len(),
            max: max_elements,
        });
    }
    let mut table: PriorTable = vec![None; ATTRIBUTES * max_elements];
    let mut warnings = Vec::new();
    for (i, e) in noisy.elements.iter().enumerate() {
        let b = e.bbox.as_array();
        for (a, m) in Modality::GEOMETRIC.into_iter().enumerate() {
            let x = b[a].clamp(0.0, 1.0);
            let cents = vocab.centroids(m);
            let mut inside: Vec<bool> = cents.iter().map(|c| (c - x).abs() < margin).collect();
            if !inside.iter().any(|&b| b) {
                let nearest = cents
                    .iter()
                    .enumerate()
                    .min_by(|(_, p), (_, q)| (*p - x).abs().total_cmp(&(*q - x).abs()))
                    .map(|(j, _)| j)
                    .ok_or(Error::UnfittedVocab("refinement prior"))?;
                inside[nearest] = true;
                warnings.push(PriorWarning::EmptyWindow {
                    element: i,
                    modality: m.name(),
                    value: x,
                });
            }
            let outside = match kind {
                PriorKind::RefineNegation => f64::NEG_INFINITY,
                _ => 0.0,
            };
            let mut pi: Vec<f64> = cents
                .iter()
                .zip(&inside)
                .map(|(c, &ins)| match (kind, ins) {
                    (_, false) => outside,
                    (PriorKind::RefineDefault, true) => 1.0,
                    (PriorKind::RefineGaussian, true) => (c - x) * (c - x),
                    _ => 0.0,
                })
                .collect();
            // PAD and MASK are outside every window.
            pi.push(outside);
            pi.push(outside);
            table[ATTRIBUTES * i + 1 + a] = Some(pi);
        }
    }
    Ok((table, warnings))
}

/// Expected continuous box of one element from the distributions at its four
/// geometric positions. PAD/MASK mass is renormalized away.
pub fn expected_box(geo: [&[f64]; 4], vocab: &Vocabulary, element: usize) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (a, m) in Modality::GEOMETRIC.into_iter().enumerate() {
        let cents = vocab.centroids(m);
        let s: f64 = geo[a][..cents.len()].iter().sum();
        if !(s > 0.0) {
            return Err(Error::NoGeometricMass {
                position: ATTRIBUTES * element + 1 + a,
            });
        }
        out[a] = geo[a].iter().zip(cents).map(|(p, c)| p * c).sum::<f64>() / s;
    }
    Ok(out)
}

/// Relation loss through expected boxes and its gradient with respect to
/// every local-state probability of the involved positions.
///
/// `dists[i][a]` is the distribution at geometric attribute `a` of element `i`.
pub fn relation_prob_gradient(
    dists: &[[Vec<f64>; 4]],
    constraints: &[RelationConstraint],
    vocab: &Vocabulary,
) -> Result<(f64, Vec<[Vec<f64>; 4]>)> {
    let mut boxes = Vec::with_capacity(dists.len());
    for (i, d) in dists.iter().enumerate() {
        boxes.push(expected_box([&d[0], &d[1], &d[2], &d[3]], vocab, i)?);
    }
    let (loss, box_grads) = relation_loss(&boxes, constraints)?;
    let grads = dists
        .iter()
        .enumerate()
        .map(|(i, d)| {
            std::array::from_fn(|a| {
                let m = Modality::GEOMETRIC[a];
                let cents = vocab.centroids(m);
                let s: f64 = d[a][..cents.len()].iter().sum();
                let mut g = vec![0.0; d[a].len()];
                for (n, c) in cents.iter().enumerate() {
                    g[n] = box_grads[i][a] * (c - boxes[i][a]) / s;
                }
                g
            })
        })
        .collect();
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Element};

    #[test]
    fn adjust_identity_and_point_mass() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(adjust_logits(&p, &[1.0, 2.0, 3.0, 4.0], 0.0, 0).unwrap(), p);
        let ninf = f64::NEG_INFINITY;
        let q = adjust_logits(&p, &[ninf, 0.0, ninf, ninf], 2.0, 0).unwrap();
        assert_eq!(q, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            adjust_logits(&p, &[ninf; 4], 1.0, 3),
            Err(Error::AllMassesZero { position: 3 })
        ));
    }

    #[test]
    fn adjust_hand_computed() {
        let q = adjust_logits(&[0.25; 4], &[1.0, 0.0, 0.0, 0.0], 2f64.ln(), 0).unwrap();
        for (a, b) in q.iter().zip([0.4, 0.2, 0.2, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn vocab() -> Vocabulary {
        // x centroids include 0.5 and 0.7.
        let xs = vec![0.1, 0.3, 0.5, 0.7, 0.9];
        Vocabulary::from_centroids(2, crate::QuantizerKind::Uniform, [xs.clone(), xs.clone(), xs.clone(), xs])
            .unwrap()
    }

    fn noisy(x: f64) -> Layout {
        Layout::new(vec![Element::new(1, BBox::new(x, 0.5, 0.3, 0.3))])
    }

    #[test]
    fn refine_window_examples() {
        let v = vocab();
        let (t, w) = refine_prior(&noisy(0.52), &v, PriorKind::RefineDefault, 0.1, 2).unwrap();
        assert!(w.is_empty());
        let px = t[1].as_ref().unwrap();
        assert_eq!(px[2], 1.0);
        assert_eq!(px[3], 0.0);
        assert!(t[0].is_none() && t[5].is_none());
        let (t, _) = refine_prior(&noisy(0.52), &v, PriorKind::RefineNegation, 0.1, 2).unwrap();
        let px = t[1].as_ref().unwrap();
        assert_eq!(px[2], 0.0);
        assert_eq!(px[3], f64::NEG_INFINITY);
        assert_eq!(px[6], f64::NEG_INFINITY);
        let (t, _) = refine_prior(&noisy(0.52), &v, PriorKind::RefineGaussian, 0.1, 2).unwrap();
        assert!((t[1].as_ref().unwrap()[2] - 0.0004).abs() < 1e-12);
    }

    #[test]
    fn empty_window_widens() {
        let v = vocab();
        let (t, w) = refine_prior(&noisy(0.4), &v, PriorKind::RefineDefault, 0.05, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(t[1].as_ref().unwrap().iter().filter(|&&p| p == 1.0).count(), 1);
    }

    #[test]
    fn expected_box_examples() {
        let v = vocab();
        let point = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let half = [0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0];
        let three = [0.2, 0.0, 0.3, 0.0, 0.1, 0.25, 0.15];
        let b = expected_box([&point, &half, &three, &point], &v, 0).unwrap();
        assert_eq!(b[0], 0.5);
        assert!((b[1] - 0.5).abs() < 1e-12);
        let hand = (0.2 * 0.1 + 0.3 * 0.5 + 0.1 * 0.9) / 0.6;
        assert!((b[2] - hand).abs() < 1e-12);
        let none = [0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5];
        assert!(matches!(
            expected_box([&point, &none, &point, &point], &v, 2),
            Err(Error::NoGeometricMass { position: 12 })
        ));
    }
}
