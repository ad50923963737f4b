//! Differentiable relation penalties over expected boxes.
//!
//! Boxes are `[x, y, w, h]` in center form. Binary relations read
//! "element `j` is <kind> element `i`"; the unary kinds apply to `i` alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::BBox;

/// Relative tolerance in the size relations.
pub const RELATION_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Larger,
    Smaller,
    EqualSize,
    Above,
    Below,
    Left,
    Right,
    Area,
    Aspect,
    ReadingOrder,
}

impl RelationKind {
    pub const ALL: [RelationKind; 10] = [
        RelationKind::Larger,
        RelationKind::Smaller,
        RelationKind::EqualSize,
        RelationKind::Above,
        RelationKind::Below,
        RelationKind::Left,
        RelationKind::Right,
        RelationKind::Area,
        RelationKind::Aspect,
        RelationKind::ReadingOrder,
    ];

    /// Unary kinds compare element `i` against a target scalar.
    pub fn is_unary(self) -> bool {
        matches!(self, RelationKind::Area | RelationKind::Aspect)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationConstraint {
    pub kind: RelationKind,
    pub i: usize,
    #[serde(default)]
    pub j: usize,
    /// Target area or aspect ratio for the unary kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

impl RelationConstraint {
    pub fn new(kind: RelationKind, i: usize, j: usize) -> Self {
        RelationConstraint {
            kind,
            i,
            j,
            target: None,
        }
    }

    pub fn unary(kind: RelationKind, i: usize, target: f64) -> Self {
        RelationConstraint {
            kind,
            i,
            j: i,
            target: Some(target),
        }
    }

    pub fn validate(&self, elements: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCondition(msg));
        if self.i >= elements || self.j >= elements {
            return bad(format!(
                "relation {:?} references element {} of {elements}",
                self.kind,
                self.i.max(self.j)
            ));
        }
        if self.kind.is_unary() {
            if self.target.is_none() {
                return bad(format!("relation {:?} needs a target", self.kind));
            }
        } else if self.i == self.j {
            return bad(format!("relation {:?} relates element {} to itself", self.kind, self.i));
        }
        Ok(())
    }
}

/// Penalty of one constraint and its gradient with respect to both boxes.
pub fn relation_term(c: &RelationConstraint, bi: [f64; 4], bj: [f64; 4]) -> (f64, [f64; 4], [f64; 4]) {
    let g = RELATION_TOLERANCE;
    let [xi, yi, wi, hi] = bi;
    let [xj, yj, wj, hj] = bj;
    let mut gi = [0.0; 4];
    let mut gj = [0.0; 4];
    // max(v, 0) with the subgradient 0 at the kink.
    let relu = |v: f64| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) };
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let value = match c.kind {
        RelationKind::Larger => {
            let (v, s) = relu((1.0 + g) * wi * hi - wj * hj);
            gi = [0.0, 0.0, s * (1.0 + g) * hi, s * (1.0 + g) * wi];
            gj = [0.0, 0.0, -s * hj, -s * wj];
            v
        }
        RelationKind::Smaller => {
            let (v, s) = relu((1.0 + g) * wj * hj - wi * hi);
            gi = [0.0, 0.0, -s * hi, -s * wi];
            gj = [0.0, 0.0, s * (1.0 + g) * hj, s * (1.0 + g) * wj];
            v
        }
        RelationKind::EqualSize => {
            let (v1, s1) = relu(wi * hi - (1.0 + g) * wj * hj);
            let (v2, s2) = relu(wj * hj - (1.0 + g) * wi * hi);
            let di = s1 - s2 * (1.0 + g);
            let dj = s2 - s1 * (1.0 + g);
            gi = [0.0, 0.0, di * hi, di * wi];
            gj = [0.0, 0.0, dj * hj, dj * wj];
            v1 + v2
        }
        RelationKind::Above => {
            let (v, s) = relu((yj + hj / 2.0) - (yi - hi / 2.0));
            gi = [0.0, -s, 0.0, s / 2.0];
            gj = [0.0, s, 0.0, s / 2.0];
            v
        }
        RelationKind::Below => {
            let (v, s) = relu((yi + hi / 2.0) - (yj - hj / 2.0));
            gi = [0.0, s, 0.0, s / 2.0];
            gj = [0.0, -s, 0.0, s / 2.0];
            v
        }
        RelationKind::Left => {
            let (v, s) = relu((xj + wj / 2.0) - (xi - wi / 2.0));
            gi = [-s, 0.0, s / 2.0, 0.0];
            gj = [s, 0.0, s / 2.0, 0.0];
            v
        }
        RelationKind::Right => {
            let (v, s) = relu((xi + wi / 2.0) - (xj - wj / 2.0));
            gi = [s, 0.0, s / 2.0, 0.0];
            gj = [-s, 0.0, s / 2.0, 0.0];
            v
        }
        RelationKind::Area => {
            let d = c.target.unwrap_or(0.0) - wi * hi;
            let s = sign(d);
            gi = [0.0, 0.0, -s * hi, -s * wi];
            d.abs()
        }
        RelationKind::Aspect => {
            let w = wi.max(1e-9);
            let d = c.target.unwrap_or(0.0) - hi / w;
            let s = sign(d);
            gi = [0.0, 0.0, s * hi / (w * w), -s / w];
            d.abs()
        }
        RelationKind::ReadingOrder => {
            let dist = |x: f64, y: f64, w: f64, h: f64| {
                let (a, b) = (x - w / 2.0, y - h / 2.0);
                let d = (a * a + b * b).sqrt();
                let (da, db) = if d > 0.0 { (a / d, b / d) } else { (0.0, 0.0) };
                (d, [da, db, -da / 2.0, -db / 2.0])
            };
            let (di, ddi) = dist(xi, yi, wi, hi);
            let (dj, ddj) = dist(xj, yj, wj, hj);
            let (v, s) = relu(di - dj);
            for k in 0..4 {
                gi[k] = s * ddi[k];
                gj[k] = -s * ddj[k];
            }
            v
        }
    };
    (value, gi, gj)
}

/// Summed penalty and per-element box gradients.
pub fn relation_loss(boxes: &[[f64; 4]], constraints: &[RelationConstraint]) -> Result<(f64, Vec<[f64; 4]>)> {
    let mut total = 0.0;
    let mut grads = vec![[0.0; 4]; boxes.len()];
    for c in constraints {
        c.validate(boxes.len())?;
        let (v, gi, gj) = relation_term(c, boxes[c.i], boxes[c.j]);
        total += v;
        for k in 0..4 {
            grads[c.i][k] += gi[k];
            if !c.kind.is_unary() {
                grads[c.j][k] += gj[k];
            }
        }
    }
    Ok((total, grads))
}

/// Whether a constraint is violated by concrete boxes. Binary kinds are
/// violated by any positive penalty; the unary kinds allow a relative
/// deviation of [`RELATION_TOLERANCE`] from the target.
pub fn is_violated(c: &RelationConstraint, bi: &BBox, bj: &BBox) -> bool {
    let (v, _, _) = relation_term(c, bi.as_array(), bj.as_array());
    match c.kind {
        RelationKind::Area | RelationKind::Aspect => {
            v > RELATION_TOLERANCE * c.target.unwrap_or(0.0).abs()
        }
        _ => v > 0.0,
    }
}

/// Relations that hold on ground-truth boxes `i`, `j`: the size relation
/// (always exactly one) and the position relation if the boxes are separated.
pub fn true_relations(i: usize, j: usize, bi: &BBox, bj: &BBox) -> Vec<RelationConstraint> {
    let mut out = Vec::new();
    for kind in [RelationKind::Larger, RelationKind::Smaller, RelationKind::EqualSize] {
        let c = RelationConstraint::new(kind, i, j);
        if !is_violated(&c, bi, bj) {
            out.push(c);
            break;
        }
    }
    for kind in [RelationKind::Above, RelationKind::Below, RelationKind::Left, RelationKind::Right] {
        let c = RelationConstraint::new(kind, i, j);
        if !is_violated(&c, bi, bj) {
            out.push(c);
            break;
        }
    }
    out
}
