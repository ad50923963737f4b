//! Continuous layout representation.
//!
//! A layout is an unordered set of elements, each a category id plus a
//! center-size bounding box in normalized canvas coordinates. Element order
//! carries no meaning; [`Layout::canonicalize`] defines the order used for
//! conditioning, metrics and rendering.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default maximum number of elements per layout.
pub const DEFAULT_MAX_ELEMENTS: usize = 25;

pub const DEFAULT_CANVAS: (u32, u32) = (256, 256);

/// Center-size box in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox {
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.cx, b.cy, b.w, b.h]
    }
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    /// Box from left-top-right-bottom edges.
    pub fn from_ltrb(l: f64, t: f64, r: f64, b: f64) -> Self {
        BBox {
            cx: (l + r) / 2.0,
            cy: (t + b) / 2.0,
            w: r - l,
            h: b - t,
        }
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.left().max(other.left());
        let ih = self.bottom().min(other.bottom()) - self.top().max(other.top());
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        (*self).into()
    }

    /// Clamp into the valid range: centers into [0,1], sizes into [min_size,1].
    pub fn clamped(&self, min_size: f64) -> BBox {
        BBox {
            cx: self.cx.clamp(0.0, 1.0),
            cy: self.cy.clamp(0.0, 1.0),
            w: self.w.clamp(min_size, 1.0),
            h: self.h.clamp(min_size, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Element {
    /// 1-based category id.
    pub category: u32,
    pub bbox: BBox,
}

impl Element {
    pub fn new(category: u32, bbox: BBox) -> Self {
        Element { category, bbox }
    }
}

fn default_canvas() -> (u32, u32) {
    DEFAULT_CANVAS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Pixel size, used only for rendering.
    #[serde(default = "default_canvas")]
    pub canvas: (u32, u32),
    pub elements: Vec<Element>,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            canvas: DEFAULT_CANVAS,
            elements: Vec::new(),
        }
    }
}

impl Layout {
    pub fn new(elements: Vec<Element>) -> Self {
        Layout {
            canvas: DEFAULT_CANVAS,
            elements,
        }
    }

    pub fn with_canvas(mut self, canvas: (u32, u32)) -> Self {
        self.canvas = canvas;
        self
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Check every element and layout invariant.
    pub fn validate(&self, num_categories: u32, max_elements: usize) -> Result<()> {
        if self.elements.len() > max_elements {
            return Err(Error::TooManyElements {
                count: self.elements.len(),
                max: max_elements,
            });
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.category < 1 || e.category > num_categories {
                return Err(Error::BadCategory {
                    element: i,
                    category: e.category,
                    num_categories,
                });
            }
            let b = &e.bbox;
            for (field, value) in [("cx", b.cx), ("cy", b.cy)] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::OutOfRange {
                        element: i,
                        field,
                        value,
                    });
                }
            }
            for (field, value) in [("w", b.w), ("h", b.h)] {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(Error::OutOfRange {
                        element: i,
                        field,
                        value,
                    });
                }
            }
        }
        Ok(())
    }

    /// Sort elements by (category, cy, cx).
    pub fn canonicalize(&mut self) {
        self.elements.sort_by(canonical_cmp);
    }

    pub fn canonical(&self) -> Layout {
        let mut l = self.clone();
        l.canonicalize();
        l
    }

    /// Sorted category ids, the layout's category multiset.
    pub fn category_multiset(&self) -> Vec<u32> {
        let mut cats: Vec<u32> = self.elements.iter().map(|e| e.category).collect();
        cats.sort_unstable();
        cats
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    pub fn from_json(s: &str) -> Result<Layout> {
        Ok(serde_json::from_str(s)?)
    }
}

fn canonical_cmp(a: &Element, b: &Element) -> Ordering {
    a.category
        .cmp(&b.category)
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(c: u32, cx: f64, cy: f64, w: f64, h: f64) -> Element {
        Element::new(c, BBox::new(cx, cy, w, h))
    }

    #[test]
    fn single_valid_element() {
        let l = Layout::new(vec![el(1, 0.5, 0.5, 0.2, 0.2)]);
        assert!(l.validate(5, 25).is_ok());
    }

    #[test]
    fn too_many_elements() {
        let l = Layout::new(vec![el(1, 0.5, 0.5, 0.2, 0.2); 26]);
        assert!(matches!(
            l.validate(5, 25),
            Err(Error::TooManyElements { count: 26, max: 25 })
        ));
    }

    #[test]
    fn out_of_range_center() {
        let l = Layout::new(vec![el(1, 1.2, 0.5, 0.2, 0.2)]);
        assert!(matches!(
            l.validate(5, 25),
            Err(Error::OutOfRange { field: "cx", .. })
        ));
    }

    #[test]
    fn zero_width_rejected() {
        let l = Layout::new(vec![el(1, 0.5, 0.5, 0.0, 0.2)]);
        assert!(matches!(
            l.validate(5, 25),
            Err(Error::OutOfRange { field: "w", .. })
        ));
    }

    #[test]
    fn bad_category() {
        let l = Layout::new(vec![el(0, 0.5, 0.5, 0.2, 0.2)]);
        assert!(matches!(l.validate(5, 25), Err(Error::BadCategory { .. })));
        let l = Layout::new(vec![el(6, 0.5, 0.5, 0.2, 0.2)]);
        assert!(matches!(l.validate(5, 25), Err(Error::BadCategory { .. })));
    }

    #[test]
    fn canonical_order() {
        let mut l = Layout::new(vec![
            el(2, 0.1, 0.1, 0.1, 0.1),
            el(1, 0.5, 0.9, 0.1, 0.1),
            el(1, 0.5, 0.2, 0.1, 0.1),
        ]);
        l.canonicalize();
        let order: Vec<(u32, f64)> = l.elements.iter().map(|e| (e.category, e.bbox.cy)).collect();
        assert_eq!(order, vec![(1, 0.2), (1, 0.9), (2, 0.1)]);
    }

    #[test]
    fn json_schema() {
        let l = Layout::new(vec![el(3, 0.5, 0.25, 0.2, 0.1)]).with_canvas((100, 200));
        let s = l.to_json();
        assert_eq!(
            s,
            r#"{"canvas":[100,200],"elements":[{"category":3,"bbox":[0.5,0.25,0.2,0.1]}]}"#
        );
        assert_eq!(Layout::from_json(&s).unwrap(), l);
        let no_canvas = Layout::from_json(r#"{"elements":[]}"#).unwrap();
        assert_eq!(no_canvas.canvas, DEFAULT_CANVAS);
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.5, 0.5, 0.2, 0.2);
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        let b = BBox::new(0.9, 0.9, 0.1, 0.1);
        assert_eq!(a.iou(&b), 0.0);
        // Half-overlapping squares: intersection 0.02, union 0.06.
        let c = BBox::new(0.6, 0.5, 0.2, 0.2);
        assert!((a.iou(&c) - 1.0 / 3.0).abs() < 1e-12);
    }
}
