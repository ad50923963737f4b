//! Fused CPU kernels with hand-written backward passes for the
//! row-wise operations of the network.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor, WithDType};

type CResult<T> = candle_core::Result<T>;

fn slice<'a, T>(s: &'a [T], l: &Layout) -> CResult<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&s[a..b]),
        None => candle_core::bail!("fused op needs contiguous input"),
    }
}

fn last_dim(l: &Layout) -> usize {
    *l.shape().dims().last().unwrap_or(&1)
}

/// Apply `f(row_in, row_out)` to every last-dimension row.
fn map_rows<T: WithDType>(
    src: &[T],
    l: &Layout,
    f: impl Fn(&[f64], &mut [f64]),
) -> CResult<(CpuStorage, Shape)> {
    let src = slice(src, l)?;
    let n = last_dim(l);
    let mut dst = Vec::with_capacity(src.len());
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for row in src.chunks(n) {
        for (x, v) in a.iter_mut().zip(row) {
            *x = v.to_f64();
        }
        f(&a, &mut b);
        dst.extend(b.iter().map(|v| T::from_f64(*v)));
    }
    Ok((T::to_cpu_storage_owned(dst), l.shape().clone()))
}

/// Apply `f(row_a, row_b, row_out)` to paired rows of two same-shape tensors.
fn map_rows2<T: WithDType>(
    s1: &[T],
    l1: &Layout,
    s2: &[T],
    l2: &Layout,
    f: impl Fn(&[f64], &[f64], &mut [f64]),
) -> CResult<(CpuStorage, Shape)> {
    if l1.shape() != l2.shape() {
        candle_core::bail!("fused op shape mismatch {:?} vs {:?}", l1.shape(), l2.shape());
    }
    let (s1, s2) = (slice(s1, l1)?, slice(s2, l2)?);
    let n = last_dim(l1);
    let mut dst = Vec::with_capacity(s1.len());
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (r1, r2) in s1.chunks(n).zip(s2.chunks(n)) {
        for i in 0..n {
            a[i] = r1[i].to_f64();
            b[i] = r2[i].to_f64();
        }
        f(&a, &b, &mut c);
        dst.extend(c.iter().map(|v| T::from_f64(*v)));
    }
    Ok((T::to_cpu_storage_owned(dst), l1.shape().clone()))
}

macro_rules! dispatch1 {
    ($s:expr, $l:expr, $f:expr) => {
        match $s {
            CpuStorage::F32(v) => map_rows(v, $l, $f),
            CpuStorage::F64(v) => map_rows(v, $l, $f),
            _ => candle_core::bail!("fused op supports f32 and f64 only"),
        }
    };
}

macro_rules! dispatch2 {
    ($s1:expr, $l1:expr, $s2:expr, $l2:expr, $f:expr) => {
        match ($s1, $s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => map_rows2(a, $l1, b, $l2, $f),
            (CpuStorage::F64(a), CpuStorage::F64(b)) => map_rows2(a, $l1, b, $l2, $f),
            _ => candle_core::bail!("fused op supports matching f32 or f64 inputs only"),
        }
    };
}

fn softmax_row(x: &[f64], y: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in y.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in y.iter_mut() {
        *o /= sum;
    }
}

struct Softmax;
struct SoftmaxBwd;

impl CustomOp1 for Softmax {
    fn name(&self) -> &'static str {
        "fused-softmax"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        dispatch1!(s, l, softmax_row)
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> CResult<Option<Tensor>> {
        Ok(Some(res.apply_op2_no_bwd(&grad.contiguous()?, &SoftmaxBwd)?))
    }
}

impl CustomOp2 for SoftmaxBwd {
    fn name(&self) -> &'static str {
        "fused-softmax-bwd"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        dispatch2!(s1, l1, s2, l2, |y: &[f64], g: &[f64], out: &mut [f64]| {
            let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            for i in 0..y.len() {
                out[i] = y[i] * (g[i] - dot);
            }
        })
    }
}

/// Softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> CResult<Tensor> {
    x.contiguous()?.apply_op1(Softmax)
}

struct LayerNorm {
    eps: f64,
}
struct LayerNormBwd {
    eps: f64,
}

fn moments(x: &[f64], eps: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

impl CustomOp1 for LayerNorm {
    fn name(&self) -> &'static str {
        "fused-layer-norm"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        let eps = self.eps;
        dispatch1!(s, l, |x: &[f64], y: &mut [f64]| {
            let (mean, rstd) = moments(x, eps);
            for (o, v) in y.iter_mut().zip(x) {
                *o = (v - mean) * rstd;
            }
        })
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<Option<Tensor>> {
        let op = LayerNormBwd { eps: self.eps };
        Ok(Some(arg.contiguous()?.apply_op2_no_bwd(&grad.contiguous()?, &op)?))
    }
}

impl CustomOp2 for LayerNormBwd {
    fn name(&self) -> &'static str {
        "fused-layer-norm-bwd"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let eps = self.eps;
        dispatch2!(s1, l1, s2, l2, |x: &[f64], g: &[f64], out: &mut [f64]| {
            let n = x.len() as f64;
            let (mean, rstd) = moments(x, eps);
            let gm = g.iter().sum::<f64>() / n;
            let gx = x.iter().zip(g).map(|(v, gi)| (v - mean) * rstd * gi).sum::<f64>() / n;
            for i in 0..x.len() {
                let xh = (x[i] - mean) * rstd;
                out[i] = rstd * (g[i] - gm - xh * gx);
            }
        })
    }
}

/// Layer normalization over the last dimension without affine terms.
pub fn layer_norm(x: &Tensor, eps: f64) -> CResult<Tensor> {
    x.contiguous()?.apply_op1(LayerNorm { eps })
}

struct Gelu;
struct GeluBwd;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl CustomOp1 for Gelu {
    fn name(&self) -> &'static str {
        "fused-gelu-erf"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        dispatch1!(s, l, |x: &[f64], y: &mut [f64]| {
            for (o, v) in y.iter_mut().zip(x) {
                *o = 0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
            }
        })
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<Option<Tensor>> {
        Ok(Some(arg.contiguous()?.apply_op2_no_bwd(&grad.contiguous()?, &GeluBwd)?))
    }
}

impl CustomOp2 for GeluBwd {
    fn name(&self) -> &'static str {
        "fused-gelu-erf-bwd"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        dispatch2!(s1, l1, s2, l2, |x: &[f64], g: &[f64], out: &mut [f64]| {
            for i in 0..x.len() {
                let v = x[i];
                let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = FRAC_1_SQRT_2PI * (-0.5 * v * v).exp();
                out[i] = g[i] * (cdf + v * pdf);
            }
        })
    }
}

/// Exact (erf-based) GELU.
pub fn gelu(x: &Tensor) -> CResult<Tensor> {
    x.contiguous()?.apply_op1(Gelu)
}
