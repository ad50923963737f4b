//! Grid-flow synthetic corpus.
//!
//! Elements are laid out left to right on a `rows × cols` grid, wrapping to
//! the next row when the current one is full. Each category has a set of
//! admissible column spans and a height factor; elements are vertically
//! centered in their row. Every element therefore shares its row's center
//! line or the canvas-left edge with another element, so alignment is
//! exactly 0 before jitter.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, SplitRatios};
use super::perturb::MIN_SIZE;
use crate::error::{Error, Result};
use crate::layout::{BBox, Element, Layout};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_categories: u32,
    pub rows: usize,
    pub cols: usize,
    /// Std of Gaussian noise added to every coordinate.
    pub jitter: f64,
    /// Relative weight of element counts `1, 2, …`.
    pub count_weights: Vec<f64>,
    /// Relative weight of categories `1..=C`; uniform when empty.
    pub category_weights: Vec<f64>,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_categories: 5,
            rows: 10,
            cols: 4,
            jitter: 0.0,
            count_weights: vec![1.0; 10],
            category_weights: vec![0.3, 0.25, 0.2, 0.15, 0.1],
            size: 5000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn max_elements(&self) -> usize {
        self.count_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_categories == 0 || self.rows == 0 || self.cols == 0 {
            return bad("categories, rows and cols must be >= 1".into());
        }
        if !(self.jitter >= 0.0) {
            return bad(format!("jitter {} must be >= 0", self.jitter));
        }
        if self.rows < self.max_elements() {
            return bad(format!(
                "{} rows cannot hold {} elements",
                self.rows,
                self.max_elements()
            ));
        }
        if !self.category_weights.is_empty() && self.category_weights.len() != self.num_categories as usize {
            return bad(format!(
                "{} category weights for {} categories",
                self.category_weights.len(),
                self.num_categories
            ));
        }
        for w in [&self.count_weights, &self.category_weights] {
            if w.iter().any(|x| !(*x >= 0.0)) {
                return bad("weights must be >= 0".into());
            }
        }
        if !self.count_weights.iter().any(|w| *w > 0.0) {
            return bad("count weights are all zero".into());
        }
        Ok(())
    }

    /// Normalized category distribution.
    pub fn category_distribution(&self) -> Vec<f64> {
        let w: Vec<f64> = if self.category_weights.is_empty() {
            vec![1.0; self.num_categories as usize]
        } else {
            self.category_weights.clone()
        };
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    /// Admissible spans (in columns) and height factor of a category.
    pub fn shape_of(&self, category: u32) -> (Vec<usize>, f64) {
        let q = self.cols;
        let half = (q / 2).max(1);
        match (category - 1) % 5 {
            0 => (vec![q], 0.4),
            1 => (vec![half], 0.8),
            2 => (vec![1], 0.9),
            3 => (vec![1, half], 0.6),
            _ => (vec![half, q], 0.5),
        }
    }
}

fn one_layout(spec: &SyntheticSpec, counts: &WeightedIndex<f64>, cats: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> Layout {
    let e = counts.sample(rng) + 1;
    let q = spec.cols as f64;
    let row_h = 1.0 / spec.rows as f64;
    let mut placed: Vec<(u32, usize, usize, usize, f64)> = Vec::with_capacity(e);
    let (mut row, mut col) = (0usize, 0usize);
    for _ in 0..e {
        let c = cats.sample(rng) as u32 + 1;
        let (spans, hf) = spec.shape_of(c);
        let span = spans[rng.random_range(0..spans.len())].min(spec.cols);
        if col + span > spec.cols {
            row += 1;
            col = 0;
        }
        placed.push((c, row, col, span, hf));
        col += span;
    }
    let used = row + 1;
    let slack = spec.rows - used;
    let shift = rng.random_range(0..=slack);
    let normal = (spec.jitter > 0.0).then(|| Normal::new(0.0, spec.jitter).expect("finite jitter"));
    let elements = placed
        .into_iter()
        .map(|(c, r, col, span, hf)| {
            let w = span as f64 / q;
            let left = col as f64 / q;
            let cy = (r + shift) as f64 * row_h + row_h / 2.0;
            let mut b = BBox::new(left + w / 2.0, cy, w, hf * row_h);
            if let Some(n) = &normal {
                b = BBox::new(
                    b.cx + n.sample(rng),
                    b.cy + n.sample(rng),
                    b.w + n.sample(rng),
                    b.h + n.sample(rng),
                )
                .clamped(MIN_SIZE);
            }
            Element::new(c, b)
        })
        .collect();
    Layout::new(elements)
}

/// Generate `spec.size` layouts and split them.
pub fn gen_synthetic(spec: &SyntheticSpec, ratios: SplitRatios) -> Result<Corpus> {
    spec.validate()?;
    let counts = WeightedIndex::new(&spec.count_weights)
        .map_err(|e| Error::InvalidArgument(format!("count weights: {e}")))?;
    let cats = WeightedIndex::new(spec.category_distribution())
        .map_err(|e| Error::InvalidArgument(format!("category weights: {e}")))?;
    let mut rng = seed::rng(spec.seed, "corpus");
    let layouts: Vec<Layout> = (0..spec.size)
        .map(|_| one_layout(spec, &counts, &cats, &mut rng))
        .collect();
    let names = (1..=spec.num_categories).map(|c| format!("cat{c}")).collect();
    Corpus::from_layouts("synthetic", names, spec.max_elements(), layouts, 0, ratios, spec.seed)
}
