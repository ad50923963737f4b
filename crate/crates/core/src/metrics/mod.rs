//! Layout quality metrics and the evaluation report.

pub mod assignment;
pub mod features;
pub mod layout_metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use assignment::{max_weight_assignment, min_cost_assignment};
pub use features::{density_coverage, fid, frechet_distance, BoxStatistics, FeatureExtractor, NetFeatures, FID_EPS};
pub use layout_metrics::{alignment, docsim, docsim_weight, max_iou_collection, max_iou_pair, overlap};

use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::sampler::relation::{is_violated, RelationConstraint};

/// Fraction of (layout, constraint) pairs whose penalty is positive. A
/// constraint naming an element the layout lacks counts as violated.
pub fn violation_rate(layouts: &[Layout], constraints: &[Vec<RelationConstraint>]) -> Result<f64> {
    if layouts.len() != constraints.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layouts with {} constraint lists",
            layouts.len(),
            constraints.len()
        )));
    }
    let mut total = 0usize;
    let mut violated = 0usize;
    for (l, cs) in layouts.iter().zip(constraints) {
        for c in cs {
            total += 1;
            let (Some(a), Some(b)) = (l.elements.get(c.i), l.elements.get(c.j)) else {
                violated += 1;
                continue;
            };
            if is_violated(c, &a.bbox, &b.bbox) {
                violated += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { violated as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub reference: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Free-form echo of the settings that produced the report.
    pub config: serde_json::Value,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let width = self.metrics.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut s = format!("{:<width$}  {}\n", "metric", "value");
        s.push_str(&format!("{:<width$}  {}\n", "samples", self.samples));
        s.push_str(&format!("{:<width$}  {}\n", "reference", self.reference));
        for (k, v) in &self.metrics {
            s.push_str(&format!("{k:<width$}  {v:.6}\n"));
        }
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}

#[derive(Default)]
pub struct EvalOptions<'a> {
    pub extractor: Option<&'a dyn FeatureExtractor>,
    /// Neighbourhood size for density/coverage.
    pub k: usize,
    /// Per-generated-layout constraints for the violation rate.
    pub constraints: Option<&'a [Vec<RelationConstraint>]>,
    /// Treat `generated[i]` and `reference[i]` as a pair for DocSim.
    pub paired: bool,
    pub config: serde_json::Value,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn evaluate(generated: &[Layout], reference: &[Layout], opts: &EvalOptions) -> Result<MetricReport> {
    if generated.is_empty() {
        return Err(Error::EmptyData("no generated layouts"));
    }
    let mut metrics = BTreeMap::new();
    let mut notes = Vec::new();
    let nonempty = |ls: &[Layout]| -> Vec<Layout> { ls.iter().filter(|l| !l.is_empty()).cloned().collect() };
    let gen_ne = nonempty(generated);
    metrics.insert("alignment".into(), mean(gen_ne.iter().map(alignment)));
    metrics.insert("overlap".into(), mean(gen_ne.iter().map(overlap)));
    if !reference.is_empty() {
        let ref_ne = nonempty(reference);
        metrics.insert("max_iou".into(), max_iou_collection(generated, reference)?);
        metrics.insert("reference_alignment".into(), mean(ref_ne.iter().map(alignment)));
        metrics.insert("reference_overlap".into(), mean(ref_ne.iter().map(overlap)));
        if opts.paired && generated.len() == reference.len() {
            metrics.insert(
                "docsim".into(),
                mean(generated.iter().zip(reference).map(|(a, b)| docsim(a, b))),
            );
        }
        if let Some(ex) = opts.extractor {
            let gf = ex.extract(generated)?;
            let rf = ex.extract(reference)?;
            metrics.insert("fid".into(), frechet_distance(&gf, &rf)?);
            notes.push("fid uses the artifact's own feature extractor; values are for relative comparison only".into());
            let k = opts.k.max(1);
            match density_coverage(&gf, &rf, k) {
                Ok((d, c)) => {
                    metrics.insert("density".into(), d);
                    metrics.insert("coverage".into(), c);
                }
                Err(Error::TooFewPoints { .. }) => notes.push(format!("too few points for density/coverage at k={k}")),
                Err(e) => return Err(e),
            }
        }
    }
    if let Some(cs) = opts.constraints {
        metrics.insert("violation_rate".into(), violation_rate(generated, cs)?);
    }
    if let Some((k, v)) = metrics.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("metric {k} is not finite ({v})")));
    }
    Ok(MetricReport {
        samples: generated.len(),
        reference: reference.len(),
        metrics,
        config: opts.config.clone(),
        notes,
    })
}
