//! Noisy observations for the refinement task.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::layout::{BBox, Element, Layout};

/// Noise std on each of `cx, cy, w, h` (a variance of 0.01).
pub const DEFAULT_NOISE_STD: f64 = 0.1;

/// Smallest size kept after clamping, so perturbed layouts stay valid.
pub const MIN_SIZE: f64 = 1e-3;

/// Add independent Gaussian noise to every coordinate and clamp back into
/// validity. Categories are untouched; `std = 0` is the identity.
pub fn perturb(layout: &Layout, std: f64, rng: &mut impl Rng) -> Layout {
    if std == 0.0 {
        return layout.clone();
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    let elements = layout
        .elements
        .iter()
        .map(|e| {
            let b = e.bbox;
            let noisy = BBox::new(
                b.cx + normal.sample(rng),
                b.cy + normal.sample(rng),
                b.w + normal.sample(rng),
                b.h + normal.sample(rng),
            );
            Element::new(e.category, noisy.clamped(MIN_SIZE))
        })
        .collect();
    Layout {
        canvas: layout.canvas,
        elements,
    }
}
