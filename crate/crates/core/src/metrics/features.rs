//! Feature-space metrics: Fréchet distance and k-NN density/coverage.

use nalgebra::{DMatrix, DVector};

use crate::denoiser::DenoiserNet;
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::quantizer::{Modality, Vocabulary};
use crate::tokens::flatten;

/// Diagonal regularization added to both covariances.
pub const FID_EPS: f64 = 1e-6;

/// Maps layouts to fixed-length vectors.
pub trait FeatureExtractor {
    fn dim(&self) -> usize;
    fn extract(&self, layouts: &[Layout]) -> Result<Vec<Vec<f64>>>;
}

/// Mean-pooled final hidden state of a trained denoiser at `t = 1` on the
/// clean, canonically ordered sequence.
pub struct NetFeatures<'a> {
    pub net: &'a DenoiserNet,
    pub vocab: &'a Vocabulary,
    pub batch_size: usize,
}

impl FeatureExtractor for NetFeatures<'_> {
    fn dim(&self) -> usize {
        self.net.config().embed_dim
    }

    fn extract(&self, layouts: &[Layout]) -> Result<Vec<Vec<f64>>> {
        let m = self.net.config().max_elements;
        let mut out = Vec::with_capacity(layouts.len());
        for chunk in layouts.chunks(self.batch_size.max(1)) {
            let seqs = chunk
                .iter()
                .map(|l| flatten(&l.canonical(), self.vocab, m))
                .collect::<Result<Vec<_>>>()?;
            out.extend(self.net.embed(&seqs)?);
        }
        Ok(out)
    }
}

/// Model-free descriptor: category histogram, element count, and per-
/// coordinate mean and std over elements.
pub struct BoxStatistics {
    pub num_categories: u32,
}

impl FeatureExtractor for BoxStatistics {
    fn dim(&self) -> usize {
        self.num_categories as usize + 1 + 8
    }

    fn extract(&self, layouts: &[Layout]) -> Result<Vec<Vec<f64>>> {
        let c = self.num_categories as usize;
        Ok(layouts
            .iter()
            .map(|l| {
                let mut f = vec![0.0; self.dim()];
                let n = l.len().max(1) as f64;
                for e in &l.elements {
                    let k = (e.category as usize).clamp(1, c) - 1;
                    f[k] += 1.0 / n;
                }
                f[c] = l.len() as f64 / crate::layout::DEFAULT_MAX_ELEMENTS as f64;
                for (a, _) in Modality::GEOMETRIC.iter().enumerate() {
                    let vals: Vec<f64> = l.elements.iter().map(|e| e.bbox.as_array()[a]).collect();
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    f[c + 1 + 2 * a] = mean;
                    f[c + 2 + 2 * a] = var.sqrt();
                }
                f
            })
            .collect())
    }
}

fn moments(x: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("ragged feature rows".into()));
    }
    let m = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let mean = m.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu1, s1) = moments(a)?;
    let (mu2, s2) = moments(b)?;
    if mu1.len() != mu2.len() {
        return Err(Error::ShapeMismatch(format!(
            "feature dims {} and {}",
            mu1.len(),
            mu2.len()
        )));
    }
    let d = mu1.len();
    let eye = DMatrix::<f64>::identity(d, d) * FID_EPS;
    let s1 = s1 + &eye;
    let s2 = s2 + &eye;
    let r1 = sym_sqrt(&s1);
    let inner = &r1 * &s2 * &r1;
    let cross = sym_sqrt(&inner).trace();
    let diff = (mu1 - mu2).norm_squared();
    Ok((diff + s1.trace() + s2.trace() - 2.0 * cross).max(0.0))
}

pub fn fid(generated: &[Layout], reference: &[Layout], extractor: &dyn FeatureExtractor) -> Result<f64> {
    frechet_distance(&extractor.extract(generated)?, &extractor.extract(reference)?)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// k-NN manifold density and coverage of generated points with respect to
/// reference points.
pub fn density_coverage(generated: &[Vec<f64>], reference: &[Vec<f64>], k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    for set in [generated, reference] {
        if set.len() < k + 1 {
            return Err(Error::TooFewPoints {
                needed: k + 1,
                got: set.len(),
            });
        }
    }
    let radii: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let mut d: Vec<f64> = reference
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, o)| dist(r, o))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    let mut inside = 0usize;
    let mut covered = vec![false; reference.len()];
    for g in generated {
        for (j, r) in reference.iter().enumerate() {
            if dist(g, r) <= radii[j] {
                inside += 1;
                covered[j] = true;
            }
        }
    }
    let density = inside as f64 / (k * generated.len()) as f64;
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / reference.len() as f64;
    Ok((density, coverage))
}
