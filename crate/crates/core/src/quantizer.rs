//! Per-modality scalar quantization and the global token vocabulary.
//!
//! Global ids are laid out as `[categories | x | y | w | h | PAD | MASK]`.
//! Each geometric modality owns `B` sorted centroids; `loc(id)` returns the
//! centroid of a geometric id.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Layout;

pub const DEFAULT_BINS: usize = 32;

const KMEANS_TOL: f64 = 1e-8;
const KMEANS_MAX_ITER: usize = 300;
const KMEANS_RESTARTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    Kmeans,
    Uniform,
    Percentile,
}

impl std::str::FromStr for QuantizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" => Ok(QuantizerKind::Kmeans),
            "uniform" => Ok(QuantizerKind::Uniform),
            "percentile" => Ok(QuantizerKind::Percentile),
            other => Err(Error::InvalidArgument(format!(
                "unknown quantizer kind {other:?}"
            ))),
        }
    }
}

/// The five attribute streams of an element, in flattening order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Category,
    X,
    Y,
    W,
    H,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Category,
        Modality::X,
        Modality::Y,
        Modality::W,
        Modality::H,
    ];
    pub const GEOMETRIC: [Modality; 4] = [Modality::X, Modality::Y, Modality::W, Modality::H];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Modality {
        Modality::ALL[i]
    }

    /// Modality of flattened sequence position `p`.
    pub fn of_position(p: usize) -> Modality {
        Modality::ALL[p % 5]
    }

    pub fn is_geometric(self) -> bool {
        self != Modality::Category
    }

    pub fn is_size(self) -> bool {
        matches!(self, Modality::W | Modality::H)
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Category => "cat",
            Modality::X => "x",
            Modality::Y => "y",
            Modality::W => "w",
            Modality::H => "h",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-fatal conditions reported while fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// Fewer distinct values than bins; centroids were padded with midpoints.
    BinsExceedDistinct {
        modality: Modality,
        distinct: usize,
        bins: usize,
    },
}

/// Fit `bins` sorted centroids to `values`.
///
/// `size` selects the size variant of the uniform grid. Returns the
/// centroids and whether they had to be padded because the data had fewer
/// distinct values than `bins`.
pub fn fit_centroids(
    values: &[f64],
    bins: usize,
    kind: QuantizerKind,
    size: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, bool)> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bins must be >= 2, got {bins}")));
    }
    if kind == QuantizerKind::Uniform {
        return Ok((uniform_centroids(bins, size), false));
    }
    if values.is_empty() {
        return Err(Error::EmptyData("quantizer"));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "quantizer input {v} outside [0,1]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < bins {
        return Ok((pad_with_midpoints(distinct, bins), true));
    }
    let centroids = match kind {
        QuantizerKind::Kmeans => kmeans_1d(&sorted, bins, rng),
        QuantizerKind::Percentile => percentile_means(&sorted, bins),
        QuantizerKind::Uniform => unreachable!(),
    };
    let mut c = centroids;
    c.sort_by(f64::total_cmp);
    let before = c.len();
    c.dedup();
    let padded = c.len() < before;
    Ok((pad_with_midpoints(c, bins), padded))
}

pub fn uniform_centroids(bins: usize, size: bool) -> Vec<f64> {
    let b = bins as f64;
    if size {
        (1..=bins).map(|i| i as f64 / b).collect()
    } else {
        (0..bins).map(|i| i as f64 / b).collect()
    }
}

/// Insert midpoints into the widest gaps until there are `bins` values.
fn pad_with_midpoints(mut c: Vec<f64>, bins: usize) -> Vec<f64> {
    if c.is_empty() {
        c.push(0.5);
    }
    while c.len() < bins {
        if c.len() == 1 {
            let v = c[0];
            // Single value: pad toward whichever end has more room.
            let other = if v <= 0.5 { (v + 1.0) / 2.0 } else { v / 2.0 };
            c.push(other);
            c.sort_by(f64::total_cmp);
            continue;
        }
        let (gap_idx, _) = c
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[1] - w[0]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let head = c[0];
        let tail = 1.0 - c[c.len() - 1];
        let inner = c[gap_idx + 1] - c[gap_idx];
        if head > inner && head >= tail {
            c.insert(0, head / 2.0);
        } else if tail > inner {
            let last = c[c.len() - 1];
            c.push((last + 1.0) / 2.0);
        } else {
            c.insert(gap_idx + 1, (c[gap_idx] + c[gap_idx + 1]) / 2.0);
        }
    }
    c
}

fn percentile_means(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    (0..bins)
        .map(|g| {
            let lo = g * n / bins;
            let hi = (g + 1) * n / bins;
            let group = &sorted[lo..hi.max(lo + 1).min(n)];
            group.iter().sum::<f64>() / group.len() as f64
        })
        .collect()
}

/// Index of the centroid nearest to `v`, ties toward the smaller centroid.
fn nearest(sorted_centroids: &[f64], v: f64) -> usize {
    let idx = sorted_centroids.partition_point(|c| *c < v);
    if idx == 0 {
        return 0;
    }
    if idx == sorted_centroids.len() {
        return idx - 1;
    }
    let below = v - sorted_centroids[idx - 1];
    let above = sorted_centroids[idx] - v;
    if above < below {
        idx
    } else {
        idx - 1
    }
}

fn kmeans_1d(sorted: &[f64], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let c = lloyd(sorted, kmeans_pp_seed(sorted, k, rng));
        let sse = within_cluster_sse(sorted, &c);
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, c));
        }
    }
    best.expect("at least one restart").1
}

fn kmeans_pp_seed(values: &[f64], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            values[rng.random_range(0..values.len())]
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = values.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            values[pick]
        };
        centers.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }
    centers
}

fn lloyd(sorted: &[f64], mut centers: Vec<f64>) -> Vec<f64> {
    let k = centers.len();
    for _ in 0..KMEANS_MAX_ITER {
        centers.sort_by(f64::total_cmp);
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for &v in sorted {
            let j = nearest(&centers, v);
            sums[j] += v;
            counts[j] += 1;
        }
        let mut moved: f64 = 0.0;
        let mut next = centers.clone();
        for j in 0..k {
            if counts[j] > 0 {
                next[j] = sums[j] / counts[j] as f64;
            } else {
                // Empty cluster: move it to the worst-represented point.
                let far = sorted
                    .iter()
                    .copied()
                    .max_by(|a, b| {
                        let da = (a - centers[nearest(&centers, *a)]).abs();
                        let db = (b - centers[nearest(&centers, *b)]).abs();
                        da.total_cmp(&db)
                    })
                    .expect("non-empty");
                next[j] = far;
            }
            moved = moved.max((next[j] - centers[j]).abs());
        }
        centers = next;
        if moved < KMEANS_TOL {
            break;
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

/// Total squared distance from each value to its nearest centroid.
pub fn within_cluster_sse(values: &[f64], centroids: &[f64]) -> f64 {
    let mut c = centroids.to_vec();
    c.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| (v - c[nearest(&c, *v)]).powi(2))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CentroidTable {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VocabularyFile {
    #[serde(rename = "C")]
    num_categories: u32,
    #[serde(rename = "B")]
    bins: usize,
    centroids: CentroidTable,
    kind: QuantizerKind,
}

/// Global token vocabulary plus the fitted centroids of each geometric modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    num_categories: u32,
    bins: usize,
    kind: QuantizerKind,
    /// Indexed by `Modality::index() - 1`; empty until fitted.
    centroids: [Vec<f64>; 4],
}

impl Vocabulary {
    /// A vocabulary with the id layout defined but no centroids.
    pub fn unfitted(num_categories: u32, bins: usize, kind: QuantizerKind) -> Self {
        Vocabulary {
            num_categories,
            bins,
            kind,
            centroids: Default::default(),
        }
    }

    pub fn uniform(num_categories: u32, bins: usize) -> Self {
        let mut v = Vocabulary::unfitted(num_categories, bins, QuantizerKind::Uniform);
        for m in Modality::GEOMETRIC {
            v.centroids[m.index() - 1] = uniform_centroids(bins, m.is_size());
        }
        v
    }

    /// Build from explicit centroids, checking invariants.
    pub fn from_centroids(
        num_categories: u32,
        kind: QuantizerKind,
        centroids: [Vec<f64>; 4],
    ) -> Result<Self> {
        let bins = centroids[0].len();
        if num_categories < 1 {
            return Err(Error::InvalidArgument("need at least one category".into()));
        }
        for (i, c) in centroids.iter().enumerate() {
            let m = Modality::GEOMETRIC[i];
            if c.len() != bins || bins < 2 {
                return Err(Error::InvalidArgument(format!(
                    "modality {m} has {} centroids, expected {bins} (>= 2)",
                    c.len()
                )));
            }
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "modality {m} has a centroid outside [0,1]"
                )));
            }
            if c.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "modality {m} centroids are not strictly increasing"
                )));
            }
        }
        Ok(Vocabulary {
            num_categories,
            bins,
            kind,
            centroids,
        })
    }

    /// Fit each geometric modality independently on the boxes of `layouts`.
    pub fn fit(
        layouts: &[Layout],
        num_categories: u32,
        bins: usize,
        kind: QuantizerKind,
        seed: u64,
    ) -> Result<(Self, Vec<FitWarning>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut warnings = Vec::new();
        let mut centroids: [Vec<f64>; 4] = Default::default();
        for m in Modality::GEOMETRIC {
            let values: Vec<f64> = layouts
                .iter()
                .flat_map(|l| l.elements.iter())
                .map(|e| match m {
                    Modality::X => e.bbox.cx,
                    Modality::Y => e.bbox.cy,
                    Modality::W => e.bbox.w,
                    Modality::H => e.bbox.h,
                    Modality::Category => unreachable!(),
                })
                .collect();
            let (c, padded) = fit_centroids(&values, bins, kind, m.is_size(), &mut rng)?;
            if padded {
                let mut d = values.clone();
                d.sort_by(f64::total_cmp);
                d.dedup();
                log::warn!(
                    "modality {m}: {} distinct values for {bins} bins, padded with midpoints",
                    d.len()
                );
                warnings.push(FitWarning::BinsExceedDistinct {
                    modality: m,
                    distinct: d.len(),
                    bins,
                });
            }
            centroids[m.index() - 1] = c;
        }
        let v = Vocabulary::from_centroids(num_categories, kind, centroids)?;
        Ok((v, warnings))
    }

    pub fn num_categories(&self) -> u32 {
        self.num_categories
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn kind(&self) -> QuantizerKind {
        self.kind
    }

    pub fn is_fitted(&self) -> bool {
        self.centroids.iter().all(|c| c.len() == self.bins)
    }

    pub fn centroids(&self, m: Modality) -> &[f64] {
        assert!(m.is_geometric(), "category modality has no centroids");
        &self.centroids[m.index() - 1]
    }

    /// Number of ordinary (non-special) states of a modality.
    pub fn ordinary_states(&self, m: Modality) -> usize {
        match m {
            Modality::Category => self.num_categories as usize,
            _ => self.bins,
        }
    }

    /// First global id of a modality's range.
    pub fn range_start(&self, m: Modality) -> u32 {
        match m {
            Modality::Category => 0,
            _ => self.num_categories + (m.index() as u32 - 1) * self.bins as u32,
        }
    }

    pub fn range(&self, m: Modality) -> std::ops::Range<u32> {
        let s = self.range_start(m);
        s..s + self.ordinary_states(m) as u32
    }

    pub fn pad(&self) -> u32 {
        self.num_categories + 4 * self.bins as u32
    }

    pub fn mask(&self) -> u32 {
        self.pad() + 1
    }

    /// Total number of global ids, including PAD and MASK.
    pub fn size(&self) -> usize {
        self.num_categories as usize + 4 * self.bins + 2
    }

    /// Modality owning an ordinary id, `None` for PAD/MASK/out-of-range.
    pub fn modality_of(&self, id: u32) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| self.range(*m).contains(&id))
    }

    pub fn category_token(&self, category: u32) -> u32 {
        debug_assert!(category >= 1 && category <= self.num_categories);
        category - 1
    }

    pub fn token_category(&self, id: u32) -> Option<u32> {
        (id < self.num_categories).then_some(id + 1)
    }

    /// Map a global id to its local state in modality `m`:
    /// ordinary `0..K`, PAD `K`, MASK `K + 1`.
    pub fn to_local(&self, m: Modality, id: u32) -> Option<usize> {
        let k = self.ordinary_states(m);
        if id == self.pad() {
            Some(k)
        } else if id == self.mask() {
            Some(k + 1)
        } else if self.range(m).contains(&id) {
            Some((id - self.range_start(m)) as usize)
        } else {
            None
        }
    }

    pub fn to_global(&self, m: Modality, local: usize) -> u32 {
        let k = self.ordinary_states(m);
        match local {
            l if l < k => self.range_start(m) + l as u32,
            l if l == k => self.pad(),
            l if l == k + 1 => self.mask(),
            _ => panic!("local state {local} out of range for modality {m}"),
        }
    }

    /// Nearest-centroid token for a value, ties toward the smaller centroid.
    pub fn encode(&self, value: f64, m: Modality) -> Result<u32> {
        assert!(m.is_geometric(), "encode takes a geometric modality");
        let c = &self.centroids[m.index() - 1];
        if c.is_empty() {
            return Err(Error::UnfittedVocab(m.name()));
        }
        Ok(self.range_start(m) + nearest(c, value) as u32)
    }

    /// Centroid value `loc(id)` of a geometric token.
    pub fn decode(&self, id: u32) -> Result<f64> {
        match self.modality_of(id) {
            Some(m) if m.is_geometric() => {
                let c = &self.centroids[m.index() - 1];
                if c.is_empty() {
                    return Err(Error::UnfittedVocab(m.name()));
                }
                Ok(c[(id - self.range_start(m)) as usize])
            }
            _ => Err(Error::NotGeometric(id)),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        if !self.is_fitted() {
            return Err(Error::UnfittedVocab("vocabulary"));
        }
        let [x, y, w, h] = self.centroids.clone();
        let f = VocabularyFile {
            num_categories: self.num_categories,
            bins: self.bins,
            centroids: CentroidTable { x, y, w, h },
            kind: self.kind,
        };
        Ok(serde_json::to_string(&f)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabularyFile = serde_json::from_str(s)?;
        let v = Vocabulary::from_centroids(
            f.num_categories,
            f.kind,
            [f.centroids.x, f.centroids.y, f.centroids.w, f.centroids.h],
        )?;
        if v.bins != f.bins {
            return Err(Error::InvalidArgument(format!(
                "vocabulary declares B = {} but has {} centroids",
                f.bins, v.bins
            )));
        }
        Ok(v)
    }
}
